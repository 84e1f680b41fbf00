//! Causal transformer language model: background-text pre-training,
//! answer-only fine-tuning on knowledge-supplemented questions, decoding and
//! perplexity.

use rand::distributions::{Distribution, WeightedIndex};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kgraph::{retrieve, supplement, KnowledgeGraph};
use crate::numerics::{log_softmax, rng, softmax, Adam, AdamConfig, Binding, Checkpoint, Graph, ParamId, ParamStore, Rng, Target, Var};
use crate::tokenizer::{Vocab, BOS, EOS};
use crate::training::{run_epochs, EpochLog};
use crate::transformer::{check_shape, embed, tied_logits, AttnMask, BlockDims, TransformerLayer};

pub const GROUP: &str = "decoder";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecoderConfig {
    pub vocab_size: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    /// Positions attended at once (`K`); also the size of the position table.
    pub context_window: usize,
    pub max_gen_len: usize,
}

impl DecoderConfig {
    /// Desk-scale defaults: 64 wide, 2 layers, `K = 128`, 64 generated tokens.
    pub fn desk(vocab_size: usize) -> Self {
        DecoderConfig {
            vocab_size,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 256,
            context_window: 128,
            max_gen_len: 64,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.context_window < 2 {
            return Err(Error::invalid("decoder needs a vocabulary and a context window of at least 2"));
        }
        if self.max_gen_len == 0 {
            return Err(Error::invalid("max_gen_len must be at least 1"));
        }
        self.block().validate()
    }

    pub fn block(&self) -> BlockDims {
        BlockDims {
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
        }
    }

    pub fn write_meta(&self, ckpt: &mut Checkpoint) {
        ckpt.set_meta("decoder.vocab_size", self.vocab_size as f64);
        ckpt.set_meta("decoder.hidden_dim", self.hidden_dim as f64);
        ckpt.set_meta("decoder.num_layers", self.num_layers as f64);
        ckpt.set_meta("decoder.num_heads", self.num_heads as f64);
        ckpt.set_meta("decoder.ffn_dim", self.ffn_dim as f64);
        ckpt.set_meta("decoder.context_window", self.context_window as f64);
        ckpt.set_meta("decoder.max_gen_len", self.max_gen_len as f64);
    }

    pub fn read_meta(ckpt: &Checkpoint) -> Result<Self> {
        let c = DecoderConfig {
            vocab_size: ckpt.meta_usize("decoder.vocab_size")?,
            hidden_dim: ckpt.meta_usize("decoder.hidden_dim")?,
            num_layers: ckpt.meta_usize("decoder.num_layers")?,
            num_heads: ckpt.meta_usize("decoder.num_heads")?,
            ffn_dim: ckpt.meta_usize("decoder.ffn_dim")?,
            context_window: ckpt.meta_usize("decoder.context_window")?,
            max_gen_len: ckpt.meta_usize("decoder.max_gen_len")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub config: DecoderConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub lm_bias: ParamId,
    layers: Vec<TransformerLayer>,
}

impl Decoder {
    pub fn new(config: DecoderConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        store.add_xavier("decoder.tok_emb", GROUP, config.vocab_size, h, rng)?;
        store.add_xavier("decoder.pos_emb", GROUP, config.context_window, h, rng)?;
        store.add_zeros("decoder.lm_bias", GROUP, &[1, config.vocab_size])?;
        for l in 0..config.num_layers {
            TransformerLayer::new(store, &format!("decoder.layer{l}"), GROUP, config.block(), rng)?;
        }
        Self::from_store(config, store)
    }

    pub fn from_store(config: DecoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let tok_emb = store.id("decoder.tok_emb")?;
        let pos_emb = store.id("decoder.pos_emb")?;
        let lm_bias = store.id("decoder.lm_bias")?;
        check_shape(store, tok_emb, &[config.vocab_size, config.hidden_dim])?;
        check_shape(store, pos_emb, &[config.context_window, config.hidden_dim])?;
        check_shape(store, lm_bias, &[1, config.vocab_size])?;
        let layers = (0..config.num_layers)
            .map(|l| TransformerLayer::lookup(store, &format!("decoder.layer{l}"), config.block()))
            .collect::<Result<_>>()?;
        Ok(Decoder {
            config,
            tok_emb,
            pos_emb,
            lm_bias,
            layers,
        })
    }

    /// Next-token logits at every position, `len × vocab`. Row `n` depends
    /// only on `ids[..=n]`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, ids: &[u32]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::invalid("decoder input is empty"));
        }
        let mut x = embed(g, b, self.tok_emb, self.pos_emb, ids, (self.config.vocab_size, self.config.context_window))?;
        let mask = AttnMask::causal(ids.len());
        for layer in &self.layers {
            x = layer.forward(g, b, x, &mask)?;
        }
        tied_logits(g, b, x, self.tok_emb, self.lm_bias)
    }

    /// Summed negative log-likelihood where row `n` of `forward(inputs)` is
    /// scored against `targets[n]`; `None` targets are left out.
    pub fn loss_sum(&self, g: &mut Graph, b: &Binding, inputs: &[u32], targets: &[Option<u32>]) -> Result<(Var, usize)> {
        if inputs.len() != targets.len() {
            return Err(Error::invalid("inputs and targets differ in length"));
        }
        let logits = self.forward(g, b, inputs)?;
        let t: Vec<Target> = targets
            .iter()
            .enumerate()
            .filter_map(|(row, t)| {
                t.map(|c| Target {
                    row,
                    class: c as usize,
                    weight: 1.0,
                })
            })
            .collect();
        if t.is_empty() {
            return Err(Error::invalid("loss mask selects no positions"));
        }
        if let Some(bad) = t.iter().find(|t| t.class >= self.config.vocab_size) {
            return Err(Error::invalid(format!("target id {} outside the vocabulary", bad.class)));
        }
        Ok((g.cross_entropy(logits, &t)?, t.len()))
    }
}

/// Last `k` tokens of `context`.
pub fn window(context: &[u32], k: usize) -> &[u32] {
    &context[context.len().saturating_sub(k)..]
}

/// Next-token distribution given a context, keeping only the last `K`
/// tokens.
pub fn lm_logits(decoder: &Decoder, store: &ParamStore, context: &[u32]) -> Result<Vec<f64>> {
    let ctx = window(context, decoder.config.context_window);
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let logits = decoder.forward(&mut g, &b, ctx)?;
    let t = g.value(logits);
    Ok(t.row_slice(t.rows() - 1).to_vec())
}

/// A token sequence with the positions it is scored on. `loss_mask[n]`
/// marks `ids[n]` as a prediction target given `ids[..n]`; position 0 has
/// no prefix and is never scored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LmExample {
    pub ids: Vec<u32>,
    pub loss_mask: Vec<bool>,
}

impl LmExample {
    pub fn full(ids: Vec<u32>) -> Self {
        let loss_mask = (0..ids.len()).map(|i| i > 0).collect();
        LmExample { ids, loss_mask }
    }

    fn split(&self) -> Result<(&[u32], Vec<Option<u32>>)> {
        if self.ids.len() < 2 || self.ids.len() != self.loss_mask.len() {
            return Err(Error::invalid("language-model example needs at least 2 tokens and a matching mask"));
        }
        let n = self.ids.len();
        let targets = (1..n).map(|i| self.loss_mask[i].then_some(self.ids[i])).collect();
        Ok((&self.ids[..n - 1], targets))
    }

    pub fn scored(&self) -> usize {
        self.loss_mask.iter().skip(1).filter(|&&m| m).count()
    }
}

/// Summed NLL of a batch and the number of scored tokens.
pub fn lm_loss_sum(decoder: &Decoder, g: &mut Graph, b: &Binding, batch: &[&LmExample]) -> Result<(Var, usize)> {
    let mut parts = Vec::with_capacity(batch.len());
    let mut count = 0;
    for ex in batch {
        let (inputs, targets) = ex.split()?;
        let (s, c) = decoder.loss_sum(g, b, inputs, &targets)?;
        parts.push(s);
        count += c;
    }
    let mut total = parts[0];
    for &p in &parts[1..] {
        total = g.add(total, p)?;
    }
    Ok((total, count))
}

/// Mean NLL over the masked positions of one example.
pub fn lm_loss(decoder: &Decoder, g: &mut Graph, b: &Binding, example: &LmExample) -> Result<Var> {
    let (s, c) = lm_loss_sum(decoder, g, b, &[example])?;
    g.scale(s, 1.0 / c as f64)
}

/// `[BOS] text [EOS]` cut into windows of at most `K + 1` tokens that
/// overlap by one, so every transition is scored exactly once.
pub fn chunk_text(vocab: &Vocab, text: &str, k: usize) -> Vec<LmExample> {
    let mut ids = vec![BOS];
    ids.extend(vocab.ids(text));
    ids.push(EOS);
    let mut out = Vec::new();
    let mut start = 0;
    while start + 1 < ids.len() {
        let end = (start + k + 1).min(ids.len());
        out.push(LmExample::full(ids[start..end].to_vec()));
        start = end - 1;
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LmTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl LmTrainConfig {
    /// Background-knowledge pre-training: 10 epochs.
    pub fn pretrain() -> Self {
        LmTrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 2.6e-5,
            seed: 0,
        }
    }

    /// Dialogue fine-tuning: 20 epochs at 2.6e-5.
    pub fn finetune() -> Self {
        LmTrainConfig {
            epochs: 20,
            ..Self::pretrain()
        }
    }
}

fn train(decoder: &Decoder, store: &mut ParamStore, examples: &[LmExample], cfg: &LmTrainConfig) -> Result<Vec<EpochLog>> {
    let mut adam = Adam::new(AdamConfig::default()).with_group(GROUP, cfg.lr);
    let mut r = rng(cfg.seed);
    run_epochs(store, &mut adam, examples.len(), cfg.epochs, cfg.batch_size, cfg.lr, &mut r, |g, b, batch, _| {
        let refs: Vec<&LmExample> = batch.iter().map(|&i| &examples[i]).collect();
        lm_loss_sum(decoder, g, b, &refs).map(Some)
    })
}

/// Next-token training over every position of the background texts.
pub fn pretrain_lm(decoder: &Decoder, store: &mut ParamStore, vocab: &Vocab, texts: &[String], cfg: &LmTrainConfig) -> Result<Vec<EpochLog>> {
    let examples: Vec<LmExample> = texts.iter().flat_map(|t| chunk_text(vocab, t, decoder.config.context_window)).collect();
    if examples.is_empty() {
        return Err(Error::invalid("pre-training corpus is empty"));
    }
    train(decoder, store, &examples, cfg)
}

/// How a question becomes the generator's prompt.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaFormat {
    /// Length cap of `[BOS] Q [SEP] I [SEP]`.
    pub prompt_max_len: usize,
    /// Character budget of the retrieved supplement.
    pub supplement_chars: usize,
    /// Retrieve knowledge at all (off reproduces the question-only input).
    pub use_supplement: bool,
}

impl QaFormat {
    pub fn desk() -> Self {
        QaFormat {
            prompt_max_len: 64,
            supplement_chars: 40,
            use_supplement: true,
        }
    }

    pub fn write_meta(&self, ckpt: &mut Checkpoint) {
        ckpt.set_meta("qa.prompt_max_len", self.prompt_max_len as f64);
        ckpt.set_meta("qa.supplement_chars", self.supplement_chars as f64);
        ckpt.set_meta("qa.use_supplement", self.use_supplement as u8 as f64);
    }

    pub fn read_meta(ckpt: &Checkpoint) -> Result<Self> {
        Ok(QaFormat {
            prompt_max_len: ckpt.meta_usize("qa.prompt_max_len")?,
            supplement_chars: ckpt.meta_usize("qa.supplement_chars")?,
            use_supplement: ckpt.meta("qa.use_supplement")? != 0.0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct QaPrompt {
    pub ids: Vec<u32>,
    pub supplement: String,
}

/// `[BOS] Q [SEP] I [SEP]` with `I = retrieve(Q)`.
pub fn qa_prompt(question: &str, vocab: &Vocab, graph: &KnowledgeGraph, format: &QaFormat) -> Result<QaPrompt> {
    let info = if format.use_supplement {
        retrieve(question, graph, format.supplement_chars)
    } else {
        String::new()
    };
    let s = supplement(&vocab.ids(question), &vocab.ids(&info), format.prompt_max_len)?;
    let kept: String = info.chars().take(s.supplement.len()).collect();
    Ok(QaPrompt { ids: s.ids, supplement: kept })
}

/// Prompt followed by `answer [EOS]`, scored on the answer and `[EOS]` only.
pub fn qa_example(prompt: &QaPrompt, answer: &[u32]) -> LmExample {
    let mut ids = prompt.ids.clone();
    let mut loss_mask = vec![false; ids.len()];
    ids.extend_from_slice(answer);
    ids.push(EOS);
    loss_mask.resize(ids.len(), true);
    LmExample { ids, loss_mask }
}

#[derive(Clone, Debug, Serialize)]
pub struct FinetuneOutcome {
    pub log: Vec<EpochLog>,
    pub trained: usize,
    /// Samples whose prompt plus answer exceed the context window.
    pub skipped: usize,
}

pub fn finetune_qa(
    decoder: &Decoder,
    store: &mut ParamStore,
    vocab: &Vocab,
    pairs: &[(String, String)],
    graph: &KnowledgeGraph,
    format: &QaFormat,
    cfg: &LmTrainConfig,
) -> Result<FinetuneOutcome> {
    let mut examples = Vec::new();
    let mut skipped = 0;
    for (q, a) in pairs {
        let prompt = qa_prompt(q, vocab, graph, format)?;
        let ex = qa_example(&prompt, &vocab.ids(a));
        if ex.ids.len() > decoder.config.context_window + 1 {
            skipped += 1;
            continue;
        }
        examples.push(ex);
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} QA samples longer than the context window");
    }
    if examples.is_empty() {
        return Err(Error::invalid("no QA sample fits the context window"));
    }
    let log = train(decoder, store, &examples, cfg)?;
    Ok(FinetuneOutcome {
        log,
        trained: examples.len(),
        skipped,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decode {
    Greedy,
    TopK(usize),
    Temperature(f64),
}

impl Decode {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Decode::TopK(0) => Err(Error::invalid("top-k needs k >= 1")),
            Decode::Temperature(t) if !(t > 0.0 && t.is_finite()) => Err(Error::invalid("temperature must be positive")),
            _ => Ok(()),
        }
    }
}

/// Chooses the next token from raw logits.
pub fn pick(logits: &[f64], strategy: Decode, rng: &mut Rng) -> Result<u32> {
    strategy.validate()?;
    let argmax = || {
        let mut best = 0;
        for (i, &x) in logits.iter().enumerate() {
            if x > logits[best] {
                best = i;
            }
        }
        best as u32
    };
    let sample = |weights: &[f64], rng: &mut Rng| -> Result<usize> {
        let dist = WeightedIndex::new(weights).map_err(|e| Error::invalid(format!("cannot sample: {e}")))?;
        Ok(dist.sample(rng))
    };
    match strategy {
        Decode::Greedy => Ok(argmax()),
        Decode::Temperature(t) => {
            let scaled: Vec<f64> = logits.iter().map(|x| x / t).collect();
            let p = softmax(&scaled);
            if p.iter().any(|v| !v.is_finite()) {
                return Ok(argmax());
            }
            Ok(sample(&p, rng)? as u32)
        }
        Decode::TopK(k) => {
            let mut order: Vec<usize> = (0..logits.len()).collect();
            order.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
            order.truncate(k);
            let top: Vec<f64> = order.iter().map(|&i| logits[i]).collect();
            Ok(order[sample(&softmax(&top), rng)?] as u32)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub question: String,
    pub strategy: Decode,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Generation {
    pub question: String,
    pub supplement: String,
    pub answer: String,
}

/// Decodes the answer to one question until `[EOS]` or `max_gen_len`.
pub fn generate(decoder: &Decoder, store: &ParamStore, vocab: &Vocab, graph: &KnowledgeGraph, format: &QaFormat, req: &GenerationRequest) -> Result<Generation> {
    let prompt = qa_prompt(&req.question, vocab, graph, format)?;
    let mut r = rng(req.seed);
    let mut ctx = prompt.ids.clone();
    let mut out = Vec::new();
    for _ in 0..decoder.config.max_gen_len {
        let next = pick(&lm_logits(decoder, store, &ctx)?, req.strategy, &mut r)?;
        if next == EOS {
            break;
        }
        out.push(next);
        ctx.push(next);
    }
    Ok(Generation {
        question: req.question.clone(),
        supplement: prompt.supplement,
        answer: vocab.decode(&out)?,
    })
}

/// `exp` of the mean per-token NLL of `[BOS] text [EOS]` over all texts.
pub fn perplexity(decoder: &Decoder, store: &ParamStore, vocab: &Vocab, texts: &[String]) -> Result<f64> {
    let examples: Vec<LmExample> = texts.iter().flat_map(|t| chunk_text(vocab, t, decoder.config.context_window)).collect();
    if examples.is_empty() {
        return Err(Error::invalid("perplexity needs at least one text"));
    }
    let (mut nll, mut n) = (0.0, 0usize);
    for ex in &examples {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let (s, c) = lm_loss_sum(decoder, &mut g, &b, &[ex])?;
        nll += g.scalar(s);
        n += c;
    }
    Ok((nll / n as f64).exp())
}

/// Per-position log-probabilities of the realized next tokens (diagnostic).
pub fn token_log_probs(decoder: &Decoder, store: &ParamStore, ids: &[u32]) -> Result<Vec<f64>> {
    if ids.len() < 2 {
        return Err(Error::invalid("need at least two tokens"));
    }
    let mut g = Graph::new();
    let b = store.bind(&mut g);
    let logits = decoder.forward(&mut g, &b, &ids[..ids.len() - 1])?;
    let t = g.value(logits);
    Ok((0..t.rows()).map(|r| log_softmax(t.row_slice(r))[ids[r + 1] as usize]).collect())
}

pub fn to_checkpoint(decoder: &Decoder, format: &QaFormat, store: &ParamStore) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    decoder.config.write_meta(&mut ckpt);
    format.write_meta(&mut ckpt);
    for (_, p) in store.iter().filter(|(_, p)| p.name.starts_with("decoder.")) {
        ckpt.insert(p.name.clone(), p.value.clone());
    }
    ckpt
}

pub fn from_checkpoint(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<(Decoder, QaFormat)> {
    let config = DecoderConfig::read_meta(ckpt)?;
    let dec = Decoder::new(config, store, &mut rng(0))?;
    store.load_from(ckpt)?;
    Ok((dec, QaFormat::read_meta(ckpt)?))
}
