//! Generation-evaluation metrics: n-gram overlap, word order, embedding
//! similarity and corpus statistics, plus a JSON report over aligned files.

mod embedding;
mod ngram;
mod order;
mod overlap;

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use embedding::{contextual_vectors, embed_score, min_cost_transport, static_vectors, wmd_distance, wmd_similarity, Embeddings};
pub use ngram::NgramCounts;
pub use order::{align, apply_shift, edit_distance, normalized_kendall_tau, ribes, ter, ter_trace, TerTrace, MAX_SHIFT_SPAN};
pub use overlap::{bleu, chrf, gleu, nist, nist_brevity, nist_corpus, self_bleu, weighted_prf, NistStats, Smoothing};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::tokenizer::{normalize, Vocab};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        Prf { precision, recall, f1 }
    }
}

/// Mean that does not depend on the order of `values` (sums ascending).
pub fn stable_mean(values: &mut [f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenMode {
    /// Every non-whitespace character is a token.
    #[default]
    Chars,
    Whitespace,
}

impl std::str::FromStr for TokenMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "chars" => Ok(TokenMode::Chars),
            "whitespace" => Ok(TokenMode::Whitespace),
            _ => Err(Error::invalid(format!("unknown token mode {s:?} (expected chars or whitespace)"))),
        }
    }
}

pub fn tokenize(text: &str, mode: TokenMode) -> Vec<String> {
    let text = normalize(text);
    match mode {
        TokenMode::Chars => text.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        TokenMode::Whitespace => text.split_whitespace().map(String::from).collect(),
    }
}

fn unigram_counts<S: AsRef<str>>(corpus: &[Vec<S>]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for s in corpus {
        for t in s {
            *m.entry(t.as_ref()).or_insert(0) += 1;
        }
    }
    m
}

/// Shannon entropy in bits of the corpus unigram distribution.
pub fn entropy<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<f64> {
    let counts = unigram_counts(corpus);
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::invalid("entropy of an empty corpus"));
    }
    let mut terms: Vec<f64> = counts
        .values()
        .map(|&c| {
            let p = c as f64 / total as f64;
            -p * p.log2()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

/// Distinct unigrams over total unigrams.
pub fn lexical_diversity<S: AsRef<str>>(corpus: &[Vec<S>]) -> Result<f64> {
    let counts = unigram_counts(corpus);
    let total: usize = counts.values().sum();
    if total == 0 {
        return Err(Error::invalid("lexical diversity of an empty corpus"));
    }
    Ok(counts.len() as f64 / total as f64)
}

/// `D_KL(gen ‖ ref)` in nats over add-one smoothed unigram distributions on
/// the union vocabulary.
pub fn kl_divergence<S: AsRef<str>>(generated: &[Vec<S>], reference: &[Vec<S>]) -> Result<f64> {
    let g = unigram_counts(generated);
    let r = unigram_counts(reference);
    let (ng, nr): (usize, usize) = (g.values().sum(), r.values().sum());
    if ng == 0 || nr == 0 {
        return Err(Error::invalid("KL divergence needs two non-empty corpora"));
    }
    let vocab: Vec<&str> = {
        let mut v: Vec<&str> = g.keys().chain(r.keys()).copied().collect();
        v.sort_unstable();
        v.dedup();
        v
    };
    let v = vocab.len() as f64;
    let mut terms: Vec<f64> = vocab
        .iter()
        .map(|w| {
            let p = (g.get(w).copied().unwrap_or(0) as f64 + 1.0) / (ng as f64 + v);
            let q = (r.get(w).copied().unwrap_or(0) as f64 + 1.0) / (nr as f64 + v);
            p * (p / q).ln()
        })
        .collect();
    terms.sort_by(f64::total_cmp);
    Ok(terms.iter().sum::<f64>().max(0.0))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub pairs: usize,
    pub weighted_precision: f64,
    pub weighted_recall: f64,
    pub weighted_f1: f64,
    pub bleu1: f64,
    pub chrf: f64,
    pub gleu: f64,
    pub nist: f64,
    pub ribes: f64,
    pub ter: f64,
    pub wmd_similarity: f64,
    pub embed_precision: f64,
    pub embed_recall: f64,
    pub embed_f1: f64,
    pub entropy: f64,
    pub lexical_diversity: f64,
    pub kl_divergence: f64,
    /// `None` when the generated corpus has a single sentence.
    pub self_bleu2: Option<f64>,
    pub self_bleu3: Option<f64>,
    /// `"encoder"` for contextual vectors, `"one-hot"` otherwise.
    pub embedding_source: String,
}

/// Encoder used for WMD ground costs and embedding scores.
pub struct ReportEncoder<'a> {
    pub encoder: &'a Encoder,
    pub store: &'a ParamStore,
    pub vocab: &'a Vocab,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportOptions {
    pub tokens: TokenMode,
    pub smoothing: Smoothing,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            tokens: TokenMode::Chars,
            smoothing: Smoothing::Off,
        }
    }
}

struct PairScores {
    wprf: Prf,
    bleu1: f64,
    chrf: f64,
    gleu: f64,
    ribes: f64,
    ter: f64,
    wmd: f64,
    embed: Prf,
}

/// Scores aligned generated and reference lines. Sentence metrics are
/// averaged over pairs; NIST, entropy, diversity, KL and Self-BLEU are
/// computed over the whole corpus.
pub fn report(generated: &[String], reference: &[String], encoder: Option<ReportEncoder<'_>>, opts: &ReportOptions) -> Result<MetricReport> {
    if generated.len() != reference.len() {
        return Err(Error::invalid(format!(
            "{} generated lines but {} reference lines",
            generated.len(),
            reference.len()
        )));
    }
    if generated.is_empty() {
        return Err(Error::invalid("no lines to score"));
    }
    let gen: Vec<Vec<String>> = generated.iter().map(|s| tokenize(s, opts.tokens)).collect();
    let refs: Vec<Vec<String>> = reference.iter().map(|s| tokenize(s, opts.tokens)).collect();
    if let Some(i) = refs.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("reference line {} is empty", i + 1)));
    }
    let emb = match &encoder {
        Some(e) => Embeddings::from_encoder(e.encoder, e.store, e.vocab),
        None => Embeddings::one_hot(gen.iter().chain(&refs).flatten().map(String::as_str)),
    };
    let scores: Vec<PairScores> = (0..gen.len())
        .into_par_iter()
        .map(|i| -> Result<PairScores> {
            let (c, r) = (&gen[i], &refs[i]);
            let wmd = if c.is_empty() {
                log::warn!("generated line {} is empty; WMD similarity scored 0", i + 1);
                0.0
            } else {
                wmd_similarity(c, r, &emb)?
            };
            let embed = match &encoder {
                Some(e) => embed_score(
                    &contextual_vectors(e.encoder, e.store, e.vocab, &generated[i])?,
                    &contextual_vectors(e.encoder, e.store, e.vocab, &reference[i])?,
                ),
                None => embed_score(&static_vectors(c, &emb), &static_vectors(r, &emb)),
            };
            Ok(PairScores {
                wprf: weighted_prf(c, r),
                bleu1: bleu(c, &[r.as_slice()], 1, opts.smoothing),
                chrf: chrf(&generated[i], &reference[i], 6, 2.0),
                gleu: gleu(c, r),
                ribes: ribes(c, r, 0.25, 0.10),
                ter: ter(c, r)?,
                wmd,
                embed,
            })
        })
        .collect::<Result<_>>()?;
    let mean = |f: &dyn Fn(&PairScores) -> f64| {
        let mut v: Vec<f64> = scores.iter().map(f).collect();
        stable_mean(&mut v)
    };
    let (self_bleu2, self_bleu3) = if gen.len() < 2 {
        (None, None)
    } else {
        (Some(self_bleu(&gen, 2, opts.smoothing)?), Some(self_bleu(&gen, 3, opts.smoothing)?))
    };
    let nonempty_gen: Vec<Vec<String>> = gen.iter().filter(|s| !s.is_empty()).cloned().collect();
    let corpus_or_zero = |r: Result<f64>| if nonempty_gen.is_empty() { Ok(0.0) } else { r };
    Ok(MetricReport {
        pairs: gen.len(),
        weighted_precision: mean(&|s| s.wprf.precision),
        weighted_recall: mean(&|s| s.wprf.recall),
        weighted_f1: mean(&|s| s.wprf.f1),
        bleu1: mean(&|s| s.bleu1),
        chrf: mean(&|s| s.chrf),
        gleu: mean(&|s| s.gleu),
        nist: nist_corpus_sorted(&gen, &refs)?,
        ribes: mean(&|s| s.ribes),
        ter: mean(&|s| s.ter),
        wmd_similarity: mean(&|s| s.wmd),
        embed_precision: mean(&|s| s.embed.precision),
        embed_recall: mean(&|s| s.embed.recall),
        embed_f1: mean(&|s| s.embed.f1),
        entropy: corpus_or_zero(entropy(&nonempty_gen))?,
        lexical_diversity: corpus_or_zero(lexical_diversity(&nonempty_gen))?,
        kl_divergence: corpus_or_zero(kl_divergence(&nonempty_gen, &refs))?,
        self_bleu2,
        self_bleu3,
        embedding_source: if encoder.is_some() { "encoder" } else { "one-hot" }.to_string(),
    })
}

/// Corpus NIST over pairs in a canonical order so the value does not depend
/// on how the lines are arranged.
fn nist_corpus_sorted(gen: &[Vec<String>], refs: &[Vec<String>]) -> Result<f64> {
    let mut pairs: Vec<(&Vec<String>, &Vec<String>)> = gen.iter().zip(refs).collect();
    pairs.sort();
    let (g, r): (Vec<Vec<String>>, Vec<Vec<String>>) = pairs.into_iter().map(|(a, b)| (a.clone(), b.clone())).unzip();
    nist_corpus(&g, &r, 5)
}

#[cfg(test)]
mod tests;
