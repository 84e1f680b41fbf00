//! Embedding-based metrics: Word Mover's Distance and greedy cosine
//! matching.

use std::collections::{BTreeMap, HashMap};

use super::Prf;
use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::numerics::ParamStore;
use crate::tokenizer::{Mode, Vocab};

/// Token → vector lookup with a fallback for unknown tokens.
#[derive(Clone, Debug)]
pub struct Embeddings {
    table: HashMap<String, Vec<f64>>,
    unk: Vec<f64>,
}

impl Embeddings {
    pub fn new(table: HashMap<String, Vec<f64>>, unk: Vec<f64>) -> Result<Self> {
        if table.values().any(|v| v.len() != unk.len()) {
            return Err(Error::invalid("embedding vectors differ in width"));
        }
        Ok(Embeddings { table, unk })
    }

    /// Distinct one-hot vectors for the given tokens (distance √2 between
    /// any two different tokens); unknown tokens get the zero vector.
    pub fn one_hot<'a>(tokens: impl IntoIterator<Item = &'a str>) -> Self {
        let mut uniq: Vec<&str> = tokens.into_iter().collect();
        uniq.sort_unstable();
        uniq.dedup();
        let d = uniq.len();
        let table = uniq
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut v = vec![0.0; d];
                v[i] = 1.0;
                (t.to_string(), v)
            })
            .collect();
        Embeddings { table, unk: vec![0.0; d] }
    }

    /// Rows of the encoder's input embedding table, keyed by character.
    pub fn from_encoder(encoder: &Encoder, store: &ParamStore, vocab: &Vocab) -> Self {
        let emb = store.value(encoder.tok_emb);
        let mut table = HashMap::new();
        for id in 0..vocab.len().min(emb.rows()) {
            if let Ok(tok) = vocab.token(id as u32) {
                table.insert(tok, emb.row_slice(id).to_vec());
            }
        }
        let unk = emb.row_slice(crate::tokenizer::UNK as usize).to_vec();
        Embeddings { table, unk }
    }

    pub fn get(&self, token: &str) -> &[f64] {
        self.table.get(token).map_or(&self.unk, Vec::as_slice)
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Exact minimum-cost transport between integer supplies and demands of
/// equal total, by successive shortest augmenting paths. Returns the total
/// cost.
pub fn min_cost_transport(supply: &[u64], demand: &[u64], cost: &[Vec<f64>]) -> Result<f64> {
    let (m, n) = (supply.len(), demand.len());
    if supply.iter().sum::<u64>() != demand.iter().sum::<u64>() {
        return Err(Error::invalid("transport supplies and demands differ"));
    }
    if cost.len() != m || cost.iter().any(|r| r.len() != n) {
        return Err(Error::invalid("transport cost matrix has the wrong shape"));
    }
    // nodes: source, m suppliers, n consumers, sink
    let nodes = m + n + 2;
    let (src, sink) = (0, m + n + 1);
    struct Edge {
        to: usize,
        cap: u64,
        cost: f64,
    }
    let mut edges: Vec<Edge> = Vec::new();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
    let add = |edges: &mut Vec<Edge>, adj: &mut Vec<Vec<usize>>, a: usize, b: usize, cap: u64, cost: f64| {
        adj[a].push(edges.len());
        edges.push(Edge { to: b, cap, cost });
        adj[b].push(edges.len());
        edges.push(Edge { to: a, cap: 0, cost: -cost });
    };
    for (i, &s) in supply.iter().enumerate() {
        add(&mut edges, &mut adj, src, 1 + i, s, 0.0);
    }
    for (j, &d) in demand.iter().enumerate() {
        add(&mut edges, &mut adj, 1 + m + j, sink, d, 0.0);
    }
    for i in 0..m {
        for j in 0..n {
            add(&mut edges, &mut adj, 1 + i, 1 + m + j, u64::MAX / 4, cost[i][j]);
        }
    }
    let mut total = 0.0;
    loop {
        // Bellman-Ford (queue based): residual costs may be negative
        let mut dist = vec![f64::INFINITY; nodes];
        let mut via: Vec<Option<usize>> = vec![None; nodes];
        let mut in_queue = vec![false; nodes];
        let mut queue = std::collections::VecDeque::new();
        dist[src] = 0.0;
        queue.push_back(src);
        while let Some(u) = queue.pop_front() {
            in_queue[u] = false;
            for &e in &adj[u] {
                let Edge { to, cap, cost } = edges[e];
                if cap > 0 && dist[u] + cost < dist[to] - 1e-12 {
                    dist[to] = dist[u] + cost;
                    via[to] = Some(e);
                    if !in_queue[to] {
                        in_queue[to] = true;
                        queue.push_back(to);
                    }
                }
            }
        }
        if via[sink].is_none() {
            break;
        }
        let mut push = u64::MAX;
        let mut v = sink;
        while let Some(e) = via[v] {
            push = push.min(edges[e].cap);
            v = edges[e ^ 1].to;
        }
        let mut v = sink;
        while let Some(e) = via[v] {
            edges[e].cap -= push;
            edges[e ^ 1].cap += push;
            total += push as f64 * edges[e].cost;
            v = edges[e ^ 1].to;
        }
    }
    Ok(total)
}

/// Earth mover's distance between the normalized bags of words, Euclidean
/// ground cost.
pub fn wmd_distance<S: AsRef<str>>(candidate: &[S], reference: &[S], emb: &Embeddings) -> Result<f64> {
    if candidate.is_empty() || reference.is_empty() {
        return Err(Error::invalid("WMD needs two non-empty sentences"));
    }
    let bag = |s: &[S]| -> BTreeMap<String, u64> {
        let mut m = BTreeMap::new();
        for t in s {
            *m.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
        m
    };
    let (bc, br) = (bag(candidate), bag(reference));
    let (lc, lr) = (candidate.len() as u64, reference.len() as u64);
    // scaling by Lc·Lr turns both distributions into integer masses
    let supply: Vec<u64> = bc.values().map(|&c| c * lr).collect();
    let demand: Vec<u64> = br.values().map(|&c| c * lc).collect();
    let cost: Vec<Vec<f64>> = bc.keys().map(|a| br.keys().map(|b| euclid(emb.get(a), emb.get(b))).collect()).collect();
    Ok(min_cost_transport(&supply, &demand, &cost)? / (lc * lr) as f64)
}

/// `1 / (1 + WMD)`.
pub fn wmd_similarity<S: AsRef<str>>(candidate: &[S], reference: &[S], emb: &Embeddings) -> Result<f64> {
    Ok(1.0 / (1.0 + wmd_distance(candidate, reference, emb)?))
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Greedy max-cosine matching: precision averages each candidate vector's
/// best cosine against the reference (floored at 0), recall the reverse.
pub fn embed_score(candidate: &[Vec<f64>], reference: &[Vec<f64>]) -> Prf {
    if candidate.is_empty() || reference.is_empty() {
        return Prf::new(0.0, 0.0);
    }
    let best = |xs: &[Vec<f64>], ys: &[Vec<f64>]| -> f64 {
        let mut v: Vec<f64> = xs
            .iter()
            .map(|x| ys.iter().map(|y| cosine(x, y)).fold(0.0, f64::max))
            .collect();
        super::stable_mean(&mut v)
    };
    Prf::new(best(candidate, reference), best(reference, candidate))
}

/// Contextual token vectors of `text` from the encoder's last layer,
/// `[CLS]`, `[SEP]` and padding left out.
pub fn contextual_vectors(encoder: &Encoder, store: &ParamStore, vocab: &Vocab, text: &str) -> Result<Vec<Vec<f64>>> {
    let seq = vocab.encode(text, encoder.config.max_len, Mode::Encoder)?;
    let out = encoder.encode(store, &seq)?;
    let real = seq.real_len();
    Ok((1..real.saturating_sub(1)).map(|i| out.token_reps.row_slice(i).to_vec()).collect())
}

/// Static vectors for a token list.
pub fn static_vectors<S: AsRef<str>>(tokens: &[S], emb: &Embeddings) -> Vec<Vec<f64>> {
    tokens.iter().map(|t| emb.get(t.as_ref()).to_vec()).collect()
}
