//! Triage as masked-word prediction: the question is wrapped in a template
//! with `[MASK]` slots and each department name is scored by the encoder's
//! MLM head at those slots.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, Encoder};
use crate::error::{Error, Result};
use crate::numerics::{log_softmax, rng, Adam, AdamConfig, Binding, Graph, ParamStore, Target, Var};
use crate::tokenizer::{TokenSequence, Vocab, CLS, MASK, PAD, SEP, UNK};
use crate::training::{run_epochs, EpochLog};

pub const DEFAULT_TEMPLATE: &str = "{question}这属于{mask}科";

/// A parsed template: `prefix {question} suffix_head {mask} suffix_tail`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub prefix: String,
    pub suffix_head: String,
    pub suffix_tail: String,
    pub mask_slot_count: usize,
}

impl PromptTemplate {
    /// Parses a template string holding one `{question}` followed by one
    /// `{mask}` placeholder.
    pub fn parse(template: &str, mask_slot_count: usize) -> Result<Self> {
        if mask_slot_count == 0 {
            return Err(Error::invalid("mask_slot_count must be at least 1"));
        }
        let bad = || Error::invalid(format!("template {template:?} needs one {{question}} followed by one {{mask}}"));
        let (prefix, rest) = template.split_once("{question}").ok_or_else(bad)?;
        let (head, tail) = rest.split_once("{mask}").ok_or_else(bad)?;
        if prefix.contains("{mask}") || [head, tail].iter().any(|s| s.contains("{question}") || s.contains("{mask}")) {
            return Err(bad());
        }
        Ok(PromptTemplate {
            prefix: prefix.to_string(),
            suffix_head: head.to_string(),
            suffix_tail: tail.to_string(),
            mask_slot_count,
        })
    }

    /// Tokens taken by everything except the question, `[CLS]`/`[SEP]` included.
    pub fn overhead(&self) -> usize {
        let chars = |s: &str| crate::tokenizer::normalize(s).chars().count();
        2 + chars(&self.prefix) + chars(&self.suffix_head) + self.mask_slot_count + chars(&self.suffix_tail)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Verbalizer {
    /// Sorted by label; every sequence has `slots` ids.
    labels: BTreeMap<String, Vec<u32>>,
    slots: usize,
}

impl Verbalizer {
    /// Maps each label's surface string to character ids, right-padded with
    /// `[PAD]` to the longest one.
    pub fn new(surfaces: &BTreeMap<String, String>, vocab: &Vocab) -> Result<Self> {
        if surfaces.is_empty() {
            return Err(Error::invalid("verbalizer has no labels"));
        }
        let mut raw = BTreeMap::new();
        for (label, surface) in surfaces {
            let ids = vocab.ids(surface);
            if ids.is_empty() {
                return Err(Error::invalid(format!("label {label:?} has an empty surface string")));
            }
            if ids.contains(&UNK) {
                log::warn!("label {label:?} surface {surface:?} contains characters outside the vocabulary");
            }
            raw.insert(label.clone(), ids);
        }
        let slots = raw.values().map(Vec::len).max().unwrap_or(1);
        for ids in raw.values_mut() {
            ids.resize(slots, PAD);
        }
        let mut seen: BTreeMap<&[u32], &str> = BTreeMap::new();
        for (label, ids) in &raw {
            if let Some(other) = seen.insert(ids, label) {
                return Err(Error::invalid(format!("labels {other:?} and {label:?} verbalize to the same tokens")));
            }
        }
        Ok(Verbalizer { labels: raw, slots })
    }

    /// Reads a JSON object `{label: surface}`.
    pub fn load(path: &Path, vocab: &Vocab) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let surfaces: BTreeMap<String, String> = serde_json::from_str(&text)?;
        Self::new(&surfaces, vocab)
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn tokens(&self, label: &str) -> Option<&[u32]> {
        self.labels.get(label).map(Vec::as_slice)
    }

    /// Labels in lexicographic order.
    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.labels.keys().map(String::as_str)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Prompt {
    pub tokens: TokenSequence,
    /// Positions of the `[MASK]` slots, in order.
    pub mask_positions: Vec<usize>,
}

/// `[CLS] prefix question suffix_head [MASK]… suffix_tail [SEP]`, with the
/// question truncated from the end when the whole does not fit `max_len`.
pub fn build_prompt(question: &str, template: &PromptTemplate, vocab: &Vocab, max_len: usize) -> Result<Prompt> {
    let q = vocab.ids(question);
    if q.is_empty() {
        return Err(Error::invalid("prompt question is empty"));
    }
    let overhead = template.overhead();
    if overhead >= max_len {
        return Err(Error::invalid(format!(
            "template needs {overhead} tokens but max_len is {max_len}; no room for the question"
        )));
    }
    let keep = q.len().min(max_len - overhead);
    let mut ids = Vec::with_capacity(overhead + keep);
    ids.push(CLS);
    ids.extend(vocab.ids(&template.prefix));
    ids.extend_from_slice(&q[..keep]);
    ids.extend(vocab.ids(&template.suffix_head));
    let start = ids.len();
    ids.extend(std::iter::repeat_n(MASK, template.mask_slot_count));
    ids.extend(vocab.ids(&template.suffix_tail));
    ids.push(SEP);
    let mut tokens = TokenSequence::from_ids(ids);
    tokens.original_length = crate::tokenizer::normalize(question).chars().count();
    Ok(Prompt {
        tokens,
        mask_positions: (start..start + template.mask_slot_count).collect(),
    })
}

/// Label scores from per-slot log-probabilities over the vocabulary.
/// With `include_pad` false, slots where a label has `[PAD]` are skipped.
pub fn score_from_log_probs(slot_log_probs: &[Vec<f64>], verbalizer: &Verbalizer, include_pad: bool) -> Result<BTreeMap<String, f64>> {
    if slot_log_probs.len() != verbalizer.slots {
        return Err(Error::invalid(format!(
            "{} slot distributions for a verbalizer with {} slots",
            slot_log_probs.len(),
            verbalizer.slots
        )));
    }
    let mut out = BTreeMap::new();
    for (label, ids) in &verbalizer.labels {
        let mut s = 0.0;
        for (dist, &id) in slot_log_probs.iter().zip(ids) {
            if id == PAD && !include_pad {
                continue;
            }
            s += *dist
                .get(id as usize)
                .ok_or_else(|| Error::invalid(format!("token id {id} outside the slot distribution")))?;
        }
        out.insert(label.clone(), s);
    }
    Ok(out)
}

/// Per-slot vocabulary log-probabilities from one encoder pass.
pub fn slot_log_probs(encoder: &Encoder, store: &ParamStore, prompt: &Prompt) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let logits = slot_logits(encoder, &mut g, &b, prompt)?;
    let t = g.value(logits);
    Ok((0..t.rows()).map(|r| log_softmax(t.row_slice(r))).collect())
}

fn slot_logits(encoder: &Encoder, g: &mut Graph, b: &Binding, prompt: &Prompt) -> Result<Var> {
    let reps = encoder.forward(g, b, &prompt.tokens)?;
    let slots = g.select_rows(reps, &prompt.mask_positions)?;
    encoder.mlm_logits(g, b, slots)
}

pub fn score_labels(encoder: &Encoder, store: &ParamStore, prompt: &Prompt, verbalizer: &Verbalizer, include_pad: bool) -> Result<BTreeMap<String, f64>> {
    score_from_log_probs(&slot_log_probs(encoder, store, prompt)?, verbalizer, include_pad)
}

/// Highest-scoring label; ties go to the lexicographically smallest label.
pub fn best_label(scores: &BTreeMap<String, f64>) -> Option<&str> {
    let mut best: Option<(&str, f64)> = None;
    for (label, &s) in scores {
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((label, s));
        }
    }
    best.map(|(l, _)| l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptConfig {
    pub template: String,
    pub max_len: usize,
    pub include_pad: bool,
}

impl PromptConfig {
    pub fn new(max_len: usize) -> Self {
        PromptConfig {
            template: DEFAULT_TEMPLATE.to_string(),
            max_len,
            include_pad: true,
        }
    }
}

/// Encoder plus everything needed to turn a question into a label.
#[derive(Clone, Debug)]
pub struct PromptClassifier {
    pub encoder: Encoder,
    pub template: PromptTemplate,
    pub verbalizer: Verbalizer,
    pub include_pad: bool,
    pub max_len: usize,
}

impl PromptClassifier {
    pub fn new(encoder: Encoder, verbalizer: Verbalizer, config: &PromptConfig) -> Result<Self> {
        let template = PromptTemplate::parse(&config.template, verbalizer.slots())?;
        let max_len = config.max_len.min(encoder.config.max_len);
        if template.overhead() >= max_len {
            return Err(Error::invalid("prompt template leaves no room for the question"));
        }
        Ok(PromptClassifier {
            encoder,
            template,
            verbalizer,
            include_pad: config.include_pad,
            max_len,
        })
    }

    pub fn prompt(&self, question: &str, vocab: &Vocab) -> Result<Prompt> {
        build_prompt(question, &self.template, vocab, self.max_len)
    }

    pub fn scores(&self, store: &ParamStore, question: &str, vocab: &Vocab) -> Result<BTreeMap<String, f64>> {
        let p = self.prompt(question, vocab)?;
        score_labels(&self.encoder, store, &p, &self.verbalizer, self.include_pad)
    }

    pub fn predict(&self, store: &ParamStore, question: &str, vocab: &Vocab) -> Result<String> {
        let scores = self.scores(store, question, vocab)?;
        Ok(best_label(&scores).expect("verbalizer is never empty").to_string())
    }

    /// Summed slot cross-entropy over a batch of `(prompt, label)` pairs.
    pub fn loss_sum(&self, g: &mut Graph, b: &Binding, batch: &[(&Prompt, &str)]) -> Result<Var> {
        let mut rows = Vec::new();
        let mut targets = Vec::new();
        for (prompt, label) in batch {
            let ids = self
                .verbalizer
                .tokens(label)
                .ok_or_else(|| Error::invalid(format!("label {label:?} is not in the verbalizer")))?;
            let logits = slot_logits(&self.encoder, g, b, prompt)?;
            for (slot, &id) in ids.iter().enumerate() {
                if id == PAD && !self.include_pad {
                    continue;
                }
                let row = rows.len() * self.verbalizer.slots() + slot;
                targets.push(Target {
                    row,
                    class: id as usize,
                    weight: 1.0,
                });
            }
            rows.push(logits);
        }
        let all = g.concat_rows(&rows)?;
        g.cross_entropy(all, &targets)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PromptTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PromptTrainConfig {
    fn default() -> Self {
        PromptTrainConfig {
            epochs: 20,
            batch_size: 8,
            lr: 2e-5,
            seed: 0,
        }
    }
}

/// Fine-tunes the encoder so the verbalized label fills the mask slots.
/// Only the slot positions contribute to the loss.
pub fn train_prompt(clf: &PromptClassifier, store: &mut ParamStore, vocab: &Vocab, data: &[(String, String)], cfg: &PromptTrainConfig) -> Result<Vec<EpochLog>> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let prompts = data
        .iter()
        .map(|(q, label)| {
            if clf.verbalizer.tokens(label).is_none() {
                return Err(Error::invalid(format!("label {label:?} is not in the verbalizer")));
            }
            Ok((clf.prompt(q, vocab)?, label.as_str()))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(AdamConfig::default()).with_group(encoder::GROUP, cfg.lr);
    let mut r = rng(cfg.seed);
    run_epochs(store, &mut adam, prompts.len(), cfg.epochs, cfg.batch_size, cfg.lr, &mut r, |g, b, batch, _| {
        let items: Vec<(&Prompt, &str)> = batch.iter().map(|&i| (&prompts[i].0, prompts[i].1)).collect();
        Ok(Some((clf.loss_sum(g, b, &items)?, items.len())))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;

    fn vocab() -> Vocab {
        Vocab::from_chars("头痛发热咳嗽这属于内外儿科神经呼吸".chars())
    }

    fn surfaces(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
        pairs.iter().map(|(a, b)| (a.to_string(), b.to_string())).collect()
    }

    #[test]
    fn template_parsing() {
        let t = PromptTemplate::parse(DEFAULT_TEMPLATE, 2).unwrap();
        assert_eq!((t.prefix.as_str(), t.suffix_head.as_str(), t.suffix_tail.as_str()), ("", "这属于", "科"));
        assert!(PromptTemplate::parse("{mask}{question}", 1).is_err());
        assert!(PromptTemplate::parse("{question}", 1).is_err());
        assert!(PromptTemplate::parse(DEFAULT_TEMPLATE, 0).is_err());
    }

    #[test]
    fn masks_sit_at_recorded_positions() {
        let v = vocab();
        let t = PromptTemplate::parse(DEFAULT_TEMPLATE, 2).unwrap();
        let p = build_prompt("头痛发热", &t, &v, 32).unwrap();
        assert_eq!(p.mask_positions, vec![8, 9]);
        let masks: Vec<usize> = p.tokens.ids.iter().enumerate().filter(|(_, &i)| i == MASK).map(|(i, _)| i).collect();
        assert_eq!(masks, p.mask_positions);
        assert_eq!(p, build_prompt("头痛发热", &t, &v, 32).unwrap());

        let bare = PromptTemplate::parse("{question}属于{mask}", 1).unwrap();
        let p = build_prompt("咳嗽", &bare, &v, 32).unwrap();
        assert_eq!(*p.tokens.ids.last().unwrap(), SEP);
        assert_eq!(p.mask_positions, vec![p.tokens.len() - 2]);
    }

    #[test]
    fn question_is_truncated_and_oversized_template_rejected() {
        let v = vocab();
        let t = PromptTemplate::parse(DEFAULT_TEMPLATE, 2).unwrap();
        // overhead = 2 + 3 + 2 + 1 = 8
        let p = build_prompt("头痛发热咳嗽", &t, &v, 10).unwrap();
        assert_eq!(p.tokens.len(), 10);
        assert_eq!(&p.tokens.ids[1..3], &v.ids("头痛")[..]);
        assert!(build_prompt("头痛", &t, &v, 8).is_err());
        assert!(build_prompt("", &t, &v, 32).is_err());
    }

    #[test]
    fn verbalizer_pads_and_rejects_collisions() {
        let v = vocab();
        let vb = Verbalizer::new(&surfaces(&[("neuro", "神经内"), ("peds", "儿")]), &v).unwrap();
        assert_eq!(vb.slots(), 3);
        assert_eq!(vb.tokens("peds").unwrap(), &[v.id('儿'), PAD, PAD]);
        assert!(Verbalizer::new(&surfaces(&[("a", "内"), ("b", "内")]), &v).is_err());
        assert!(Verbalizer::new(&BTreeMap::new(), &v).is_err());
    }

    #[test]
    fn hand_set_distribution_scores() {
        // vocabulary of 8 ids; labels A = [5, 6], B = [7, PAD]
        let mut v = Vocab::from_chars(std::iter::empty());
        let (c5, c6, c7) = ('甲', '乙', '丙');
        let ids: Vec<u32> = [c5, c6, c7].iter().map(|&c| v.push(c)).collect();
        let vb = Verbalizer::new(&surfaces(&[("A", "甲乙"), ("B", "丙")]), &v).unwrap();
        let mut s0 = vec![0.0f64; v.len()];
        let mut s1 = vec![0.0f64; v.len()];
        s0[ids[0] as usize] = 0.5;
        s0[ids[2] as usize] = 0.3;
        s0[PAD as usize] = 0.2;
        s1[ids[1] as usize] = 0.6;
        s1[PAD as usize] = 0.4;
        let lp: Vec<Vec<f64>> = [s0, s1].iter().map(|d| d.iter().map(|p| p.ln()).collect()).collect();
        let with_pad = score_from_log_probs(&lp, &vb, true).unwrap();
        assert!((with_pad["A"] - (0.5f64.ln() + 0.6f64.ln())).abs() < 1e-15);
        assert!((with_pad["B"] - (0.3f64.ln() + 0.4f64.ln())).abs() < 1e-15);
        let without = score_from_log_probs(&lp, &vb, false).unwrap();
        assert!((without["B"] - 0.3f64.ln()).abs() < 1e-15);
        assert_eq!(best_label(&with_pad), Some("A"));
    }

    #[test]
    fn ties_go_to_the_smallest_label() {
        let scores: BTreeMap<String, f64> = [("b".to_string(), -1.0), ("a".to_string(), -1.0), ("c".to_string(), -2.0)].into();
        assert_eq!(best_label(&scores), Some("a"));
    }

    #[test]
    fn initial_loss_is_slots_times_ln_v_for_a_uniform_head() {
        let v = vocab();
        let mut store = ParamStore::new();
        let enc = Encoder::new(
            EncoderConfig {
                vocab_size: v.len(),
                max_len: 24,
                hidden_dim: 4,
                num_layers: 1,
                num_heads: 1,
                ffn_dim: 8,
                mask_rate: 0.15,
            },
            &mut store,
            &mut rng(0),
        )
        .unwrap();
        let emb = store.id("encoder.tok_emb").unwrap();
        let zero = crate::numerics::Tensor::zeros(store.value(emb).shape());
        store.set_value(emb, zero).unwrap();
        let vb = Verbalizer::new(&surfaces(&[("neuro", "神经"), ("resp", "呼吸")]), &v).unwrap();
        let clf = PromptClassifier::new(enc, vb, &PromptConfig::new(24)).unwrap();
        let p = clf.prompt("头痛", &v).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let loss = clf.loss_sum(&mut g, &b, &[(&p, "neuro")]).unwrap();
        assert!((g.scalar(loss) - 2.0 * (v.len() as f64).ln()).abs() < 1e-9);
        let scores = clf.scores(&store, "头痛", &v).unwrap();
        assert_eq!(scores["neuro"], scores["resp"]);
        assert_eq!(clf.predict(&store, "头痛", &v).unwrap(), "neuro");
    }
}
