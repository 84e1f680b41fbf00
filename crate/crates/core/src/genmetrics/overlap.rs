//! N-gram overlap metrics: BLEU, chrF, GLEU, NIST, weighted P/R/F1 and
//! Self-BLEU.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::ngram::NgramCounts;
use super::Prf;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Smoothing {
    #[default]
    Off,
    /// Add one to numerator and denominator of every order above 1.
    AddOne,
}

/// Reference length closest to `c`; ties go to the shorter one.
fn closest_ref_len<S: AsRef<str>>(c: usize, refs: &[&[S]]) -> usize {
    refs.iter()
        .map(|r| r.len())
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

/// Clipped n-gram precision of orders `1..=max_n`, geometric mean, times the
/// brevity penalty `exp(1 − r/c)` when the candidate is shorter.
pub fn bleu<S: AsRef<str>>(candidate: &[S], references: &[&[S]], max_n: usize, smoothing: Smoothing) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = NgramCounts::new(candidate, n);
        let refs: Vec<NgramCounts> = references.iter().map(|r| NgramCounts::new(r, n)).collect();
        let (mut num, mut den) = (cand.clipped(&refs) as f64, cand.total() as f64);
        if smoothing == Smoothing::AddOne && n > 1 {
            num += 1.0;
            den += 1.0;
        }
        if num == 0.0 || den == 0.0 {
            return 0.0;
        }
        log_sum += (num / den).ln();
    }
    let c = candidate.len();
    let r = closest_ref_len(c, references);
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    bp * (log_sum / max_n as f64).exp()
}

/// Character n-gram F-score with orders `1..=max_n`. Whitespace is ignored.
/// Precision averages over the orders the candidate has n-grams for,
/// recall over the orders the reference has n-grams for.
pub fn chrf(candidate: &str, reference: &str, max_n: usize, beta: f64) -> f64 {
    let chars = |s: &str| -> Vec<String> { s.chars().filter(|c| !c.is_whitespace()).map(String::from).collect() };
    let (c, r) = (chars(candidate), chars(reference));
    match (c.is_empty(), r.is_empty()) {
        (true, true) => return 1.0,
        (true, false) | (false, true) => return 0.0,
        _ => {}
    }
    let (p, r) = averaged_pr(&c, &r, max_n);
    let b2 = beta * beta;
    if p + r == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}

/// Per-order precision and recall averaged over the orders that exist on
/// each side.
fn averaged_pr<S: AsRef<str>>(candidate: &[S], reference: &[S], max_n: usize) -> (f64, f64) {
    let (mut ps, mut pn, mut rs, mut rn) = (0.0, 0usize, 0.0, 0usize);
    for n in 1..=max_n {
        let c = NgramCounts::new(candidate, n);
        let r = NgramCounts::new(reference, n);
        let m = c.overlap(&r) as f64;
        if c.total() > 0 {
            ps += m / c.total() as f64;
            pn += 1;
        }
        if r.total() > 0 {
            rs += m / r.total() as f64;
            rn += 1;
        }
    }
    let avg = |s: f64, n: usize| if n == 0 { 0.0 } else { s / n as f64 };
    (avg(ps, pn), avg(rs, rn))
}

/// `min(precision, recall)` of n-gram matches pooled over orders 1–4.
pub fn gleu<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> f64 {
    if candidate.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (mut m, mut ct, mut rt) = (0usize, 0usize, 0usize);
    for n in 1..=4 {
        let c = NgramCounts::new(candidate, n);
        let r = NgramCounts::new(reference, n);
        m += c.overlap(&r);
        ct += c.total();
        rt += r.total();
    }
    (m as f64 / ct as f64).min(m as f64 / rt as f64)
}

/// Uniformly weighted clipped n-gram precision and recall over orders 1–4
/// (orders missing on a side are left out of that side's average), with
/// F1 their harmonic mean.
pub fn weighted_prf<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Prf {
    let (p, r) = averaged_pr(candidate, reference, 4);
    Prf::new(p, r)
}

/// Reference-side n-gram counts that define NIST information weights.
#[derive(Clone, Debug, Default)]
pub struct NistStats {
    counts: BTreeMap<Vec<String>, usize>,
    words: usize,
    ref_len_sum: usize,
    refs: usize,
}

impl NistStats {
    pub fn new<S: AsRef<str>>(references: &[&[S]], max_n: usize) -> Self {
        let mut s = NistStats::default();
        for r in references {
            s.words += r.len();
            s.ref_len_sum += r.len();
            s.refs += 1;
            for n in 1..=max_n {
                for (g, c) in NgramCounts::new(r, n).counts {
                    *s.counts.entry(g.into_iter().map(String::from).collect()).or_insert(0) += c;
                }
            }
        }
        s
    }

    /// `log₂(count(w₁…wₙ₋₁) / count(w₁…wₙ))`, the unigram prefix count being
    /// the total number of reference words.
    pub fn info(&self, gram: &[&str]) -> f64 {
        let key: Vec<String> = gram.iter().map(|s| s.to_string()).collect();
        let count = self.counts.get(&key).copied().unwrap_or(0);
        if count == 0 {
            return 0.0;
        }
        let prefix = if gram.len() == 1 {
            self.words
        } else {
            self.counts.get(&key[..key.len() - 1]).copied().unwrap_or(0)
        };
        (prefix as f64 / count as f64).log2()
    }

    pub fn mean_ref_len(&self) -> f64 {
        if self.refs == 0 {
            0.0
        } else {
            self.ref_len_sum as f64 / self.refs as f64
        }
    }
}

/// NIST brevity factor `exp(β log²(min(c/r̄, 1)))`, with β chosen so the
/// factor is 0.5 when the candidate is two thirds of the reference length.
pub fn nist_brevity(cand_len: f64, mean_ref_len: f64) -> f64 {
    if mean_ref_len <= 0.0 || cand_len <= 0.0 {
        return 0.0;
    }
    let ratio = (cand_len / mean_ref_len).min(1.0);
    let beta = 0.5f64.ln() / (2.0f64 / 3.0).ln().powi(2);
    (beta * ratio.ln().powi(2)).exp()
}

/// Per-order information gain of one candidate against its references:
/// `(Σ info of clipped matches, number of candidate n-grams)` for each order.
pub fn nist_components<S: AsRef<str>>(candidate: &[S], references: &[&[S]], stats: &NistStats, max_n: usize) -> Vec<(f64, usize)> {
    (1..=max_n)
        .map(|n| {
            let c = NgramCounts::new(candidate, n);
            let refs: Vec<NgramCounts> = references.iter().map(|r| NgramCounts::new(r, n)).collect();
            let mut gain = 0.0;
            for (g, &k) in &c.counts {
                let clip = k.min(refs.iter().map(|r| r.get(g)).max().unwrap_or(0));
                if clip > 0 {
                    gain += clip as f64 * stats.info(g);
                }
            }
            (gain, c.total())
        })
        .collect()
}

/// Sentence-level NIST with information weights taken from `references`.
pub fn nist<S: AsRef<str>>(candidate: &[S], references: &[&[S]], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() {
        return 0.0;
    }
    let stats = NistStats::new(references, max_n);
    let parts = nist_components(candidate, references, &stats, max_n);
    let score: f64 = parts.iter().filter(|(_, t)| *t > 0).map(|(g, t)| g / *t as f64).sum();
    score * nist_brevity(candidate.len() as f64, stats.mean_ref_len())
}

/// Corpus-level NIST: information from all references, gains and n-gram
/// counts pooled over the corpus before dividing.
pub fn nist_corpus<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], max_n: usize) -> Result<f64> {
    if candidates.len() != references.len() || candidates.is_empty() {
        return Err(Error::invalid("NIST needs equally many, non-zero candidate and reference lines"));
    }
    let refs: Vec<&[S]> = references.iter().map(Vec::as_slice).collect();
    let stats = NistStats::new(&refs, max_n);
    let mut gain = vec![0.0; max_n];
    let mut total = vec![0usize; max_n];
    for (c, r) in candidates.iter().zip(&refs) {
        for (k, (g, t)) in nist_components(c, &[*r], &stats, max_n).into_iter().enumerate() {
            gain[k] += g;
            total[k] += t;
        }
    }
    let score: f64 = gain.iter().zip(&total).filter(|(_, &t)| t > 0).map(|(g, &t)| g / t as f64).sum();
    let cand_len: usize = candidates.iter().map(Vec::len).sum();
    let ref_len: usize = references.iter().map(Vec::len).sum();
    Ok(score * nist_brevity(cand_len as f64, ref_len as f64))
}

/// Mean over sentences of BLEU against all the other sentences.
pub fn self_bleu<S: AsRef<str>>(corpus: &[Vec<S>], max_n: usize, smoothing: Smoothing) -> Result<f64> {
    if corpus.len() < 2 {
        return Err(Error::invalid("Self-BLEU needs at least two sentences"));
    }
    let mut scores: Vec<f64> = (0..corpus.len())
        .map(|i| {
            let others: Vec<&[S]> = corpus.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| s.as_slice()).collect();
            bleu(&corpus[i], &others, max_n, smoothing)
        })
        .collect();
    Ok(super::stable_mean(&mut scores))
}
