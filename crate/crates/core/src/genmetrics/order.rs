//! Word-order metrics: RIBES and TER.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::{Error, Result};

/// One-to-one alignment: each candidate token, left to right, takes the
/// leftmost unused occurrence of the same token in the reference. Returns
/// the reference positions in candidate order.
pub fn align<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Vec<usize> {
    let mut used = vec![false; reference.len()];
    let mut out = Vec::new();
    for c in candidate {
        if let Some(j) = (0..reference.len()).find(|&j| !used[j] && reference[j].as_ref() == c.as_ref()) {
            used[j] = true;
            out.push(j);
        }
    }
    out
}

/// `(τ + 1) / 2` for a sequence of distinct ranks; 0.5 when there are no pairs.
pub fn normalized_kendall_tau(ranks: &[usize]) -> f64 {
    let n = ranks.len();
    if n < 2 {
        return 0.5;
    }
    let mut concordant = 0i64;
    let mut discordant = 0i64;
    for i in 0..n {
        for j in i + 1..n {
            if ranks[i] < ranks[j] {
                concordant += 1;
            } else {
                discordant += 1;
            }
        }
    }
    let pairs = (n * (n - 1) / 2) as f64;
    ((concordant - discordant) as f64 / pairs + 1.0) / 2.0
}

/// `NKT · p₁^α · BP^β` with `BP = min(1, exp(1 − r/c))`.
pub fn ribes<S: AsRef<str>>(candidate: &[S], reference: &[S], alpha: f64, beta: f64) -> f64 {
    let ranks = align(candidate, reference);
    if ranks.is_empty() {
        return 0.0;
    }
    let nkt = normalized_kendall_tau(&ranks);
    let p1 = ranks.len() as f64 / candidate.len() as f64;
    let bp = (1.0 - reference.len() as f64 / candidate.len() as f64).exp().min(1.0);
    nkt * p1.powf(alpha) * bp.powf(beta)
}

/// Word-level Levenshtein distance with unit costs.
pub fn edit_distance<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1].as_ref() != b[j - 1].as_ref());
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Longest span moved by a single shift.
pub const MAX_SHIFT_SPAN: usize = 10;

/// Moves `seq[start..start + len]` so that it begins at index `dest` of the
/// sequence with the span removed.
pub fn apply_shift<T: Clone>(seq: &[T], start: usize, len: usize, dest: usize) -> Vec<T> {
    let span = &seq[start..start + len];
    let mut rest: Vec<T> = seq[..start].iter().chain(&seq[start + len..]).cloned().collect();
    let tail = rest.split_off(dest);
    rest.extend_from_slice(span);
    rest.extend(tail);
    rest
}

/// Shift count and final edit distance found by the greedy search.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TerTrace {
    pub shifts: usize,
    pub edits: usize,
}

/// Greedy shift search: repeatedly apply the block move (span of at most
/// [`MAX_SHIFT_SPAN`] tokens) that lowers the edit distance to the
/// reference the most, while any move lowers it. Ties prefer the smallest
/// start, then the shortest span, then the smallest destination.
pub fn ter_trace<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> TerTrace {
    // Tokens are interned so the inner loops compare integers.
    let mut ids: HashMap<&str, u32> = HashMap::new();
    let mut interned = [Vec::new(), Vec::new()];
    for (side, tokens) in interned.iter_mut().zip([reference, candidate]) {
        for t in tokens {
            let next = ids.len() as u32;
            side.push(*ids.entry(t.as_ref()).or_insert(next));
        }
    }
    let [reference, mut cur] = interned;
    let mut dist = edit_distance_ids(&cur, &reference, &mut (Vec::new(), Vec::new()));
    let mut shifts = 0;
    while dist > 0 {
        let n = cur.len();
        // Best move per start position, then the lowest distance overall;
        // `min_by_key` keeps the earliest start on ties, matching a
        // sequential scan.
        let best = (0..n)
            .into_par_iter()
            .filter_map(|start| {
                let (mut moved, mut rows) = (Vec::with_capacity(n), (Vec::new(), Vec::new()));
                let mut best: Option<(usize, usize, usize, usize)> = None;
                for len in 1..=MAX_SHIFT_SPAN.min(n - start) {
                    for dest in 0..=n - len {
                        if dest == start {
                            continue;
                        }
                        shift_into(&cur, start, len, dest, &mut moved);
                        let d = edit_distance_ids(&moved, &reference, &mut rows);
                        if d < best.map_or(dist, |b| b.0) {
                            best = Some((d, start, len, dest));
                        }
                    }
                }
                best
            })
            .collect::<Vec<_>>()
            .into_iter()
            .min_by_key(|b| b.0);
        match best {
            Some((d, start, len, dest)) => {
                cur = apply_shift(&cur, start, len, dest);
                dist = d;
                shifts += 1;
            }
            None => break,
        }
    }
    TerTrace { shifts, edits: dist }
}

/// [`apply_shift`] into a reused buffer.
fn shift_into(seq: &[u32], start: usize, len: usize, dest: usize, out: &mut Vec<u32>) {
    out.clear();
    let rest = |i: usize| if i < start { seq[i] } else { seq[i + len] };
    out.extend((0..dest).map(rest));
    out.extend_from_slice(&seq[start..start + len]);
    out.extend((dest..seq.len() - len).map(rest));
}

fn edit_distance_ids(a: &[u32], b: &[u32], rows: &mut (Vec<usize>, Vec<usize>)) -> usize {
    let (prev, cur) = rows;
    prev.clear();
    prev.extend(0..=b.len());
    cur.clear();
    cur.resize(b.len() + 1, 0);
    for i in 1..=a.len() {
        cur[0] = i;
        for j in 1..=b.len() {
            let sub = prev[j - 1] + usize::from(a[i - 1] != b[j - 1]);
            cur[j] = sub.min(prev[j] + 1).min(cur[j - 1] + 1);
        }
        std::mem::swap(prev, cur);
    }
    prev[b.len()]
}

/// `(shifts + edits) / |reference|`.
pub fn ter<S: AsRef<str>>(candidate: &[S], reference: &[S]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::invalid("TER needs a non-empty reference"));
    }
    let t = ter_trace(candidate, reference);
    Ok((t.shifts + t.edits) as f64 / reference.len() as f64)
}
