//! Post-LayerNorm transformer block shared by the encoder and the decoder.

use crate::error::{Error, Result};
use crate::numerics::{Binding, Graph, ParamId, ParamStore, Rng, Var};
#[cfg(test)]
use crate::numerics::Tensor;

pub const LN_EPS: f64 = 1e-5;

/// Row-major `n × n` attention permission matrix: entry `(i, j)` says
/// whether query `i` may attend to key `j`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttnMask {
    n: usize,
    allowed: Vec<bool>,
}

impl AttnMask {
    /// Every query sees every real key.
    pub fn key_padding(real: &[bool]) -> Self {
        let n = real.len();
        let mut allowed = Vec::with_capacity(n * n);
        for _ in 0..n {
            allowed.extend_from_slice(real);
        }
        AttnMask { n, allowed }
    }

    /// Query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = true;
            }
        }
        AttnMask { n, allowed }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// `softmax(Q Kᵀ / √d) V` with disallowed keys removed from the softmax.
pub fn scaled_dot_attention(g: &mut Graph, q: Var, k: Var, v: Var, mask: &AttnMask) -> Result<Var> {
    let d = g.value(q).cols();
    let n = g.value(q).rows();
    if mask.len() != n || g.value(k).rows() != n {
        return Err(Error::shape("attention", format!("mask for {} positions, input has {n}", mask.len())));
    }
    let kt = g.transpose(k)?;
    let scores = g.matmul(q, kt)?;
    let scores = g.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = g.softmax_rows(scores, Some(mask.as_slice()))?;
    g.matmul(weights, v)
}

/// One attention head with its own projections `X Wq`, `X Wk`, `X Wv`.
pub fn attention_head(g: &mut Graph, x: Var, wq: Var, wk: Var, wv: Var, mask: &AttnMask) -> Result<Var> {
    let q = g.matmul(x, wq)?;
    let k = g.matmul(x, wk)?;
    let v = g.matmul(x, wv)?;
    scaled_dot_attention(g, q, k, v, mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockDims {
    pub hidden_dim: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
}

impl BlockDims {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_heads == 0 || self.ffn_dim == 0 {
            return Err(Error::invalid("transformer dimensions must be positive"));
        }
        if !self.hidden_dim.is_multiple_of(self.num_heads) {
            return Err(Error::invalid(format!(
                "hidden_dim {} is not divisible by num_heads {}",
                self.hidden_dim, self.num_heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.hidden_dim / self.num_heads
    }
}

#[derive(Clone, Debug)]
pub struct TransformerLayer {
    dims: BlockDims,
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_gain: ParamId,
    ln1_bias: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_gain: ParamId,
    ln2_bias: ParamId,
}

const SQUARE: [&str; 4] = ["wq", "wk", "wv", "wo"];

impl TransformerLayer {
    pub fn new(store: &mut ParamStore, prefix: &str, group: &str, dims: BlockDims, rng: &mut Rng) -> Result<Self> {
        dims.validate()?;
        let h = dims.hidden_dim;
        let f = dims.ffn_dim;
        for name in SQUARE {
            store.add_xavier(format!("{prefix}.{name}"), group, h, h, rng)?;
            store.add_zeros(format!("{prefix}.b{}", &name[1..]), group, &[1, h])?;
        }
        store.add_ones(format!("{prefix}.ln1_gain"), group, &[1, h])?;
        store.add_zeros(format!("{prefix}.ln1_bias"), group, &[1, h])?;
        store.add_xavier(format!("{prefix}.w1"), group, h, f, rng)?;
        store.add_zeros(format!("{prefix}.b1"), group, &[1, f])?;
        store.add_xavier(format!("{prefix}.w2"), group, f, h, rng)?;
        store.add_zeros(format!("{prefix}.b2"), group, &[1, h])?;
        store.add_ones(format!("{prefix}.ln2_gain"), group, &[1, h])?;
        store.add_zeros(format!("{prefix}.ln2_bias"), group, &[1, h])?;
        Self::lookup(store, prefix, dims)
    }

    pub fn lookup(store: &ParamStore, prefix: &str, dims: BlockDims) -> Result<Self> {
        let id = |n: &str| store.id(&format!("{prefix}.{n}"));
        let layer = TransformerLayer {
            dims,
            wq: id("wq")?,
            bq: id("bq")?,
            wk: id("wk")?,
            bk: id("bk")?,
            wv: id("wv")?,
            bv: id("bv")?,
            wo: id("wo")?,
            bo: id("bo")?,
            ln1_gain: id("ln1_gain")?,
            ln1_bias: id("ln1_bias")?,
            w1: id("w1")?,
            b1: id("b1")?,
            w2: id("w2")?,
            b2: id("b2")?,
            ln2_gain: id("ln2_gain")?,
            ln2_bias: id("ln2_bias")?,
        };
        let h = dims.hidden_dim;
        if store.value(layer.wq).shape() != [h, h] || store.value(layer.w1).shape() != [h, dims.ffn_dim] {
            return Err(Error::Checkpoint(format!("{prefix}: parameter shapes do not match the configuration")));
        }
        Ok(layer)
    }

    fn linear(g: &mut Graph, x: Var, w: Var, bias: Var) -> Result<Var> {
        let y = g.matmul(x, w)?;
        g.add_row(y, bias)
    }

    /// Multi-head self-attention: heads concatenated, then output-projected.
    pub fn attention(&self, g: &mut Graph, b: &Binding, x: Var, mask: &AttnMask) -> Result<Var> {
        let q = Self::linear(g, x, b[self.wq], b[self.bq])?;
        let k = Self::linear(g, x, b[self.wk], b[self.bk])?;
        let v = Self::linear(g, x, b[self.wv], b[self.bv])?;
        let d = self.dims.head_dim();
        let mut heads = Vec::with_capacity(self.dims.num_heads);
        for h in 0..self.dims.num_heads {
            let qh = g.slice_cols(q, h * d, d)?;
            let kh = g.slice_cols(k, h * d, d)?;
            let vh = g.slice_cols(v, h * d, d)?;
            heads.push(scaled_dot_attention(g, qh, kh, vh, mask)?);
        }
        let cat = if heads.len() == 1 { heads[0] } else { g.concat_cols(&heads)? };
        Self::linear(g, cat, b[self.wo], b[self.bo])
    }

    /// `O = LN(X + MHA(X))`, then `LN(O + FFN(O))`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, x: Var, mask: &AttnMask) -> Result<Var> {
        let s = self.attention(g, b, x, mask)?;
        let r = g.add(x, s)?;
        let o = g.layer_norm_rows(r, b[self.ln1_gain], b[self.ln1_bias], LN_EPS)?;
        let hdn = Self::linear(g, o, b[self.w1], b[self.b1])?;
        let hdn = g.gelu(hdn)?;
        let f = Self::linear(g, hdn, b[self.w2], b[self.b2])?;
        let r2 = g.add(o, f)?;
        g.layer_norm_rows(r2, b[self.ln2_gain], b[self.ln2_bias], LN_EPS)
    }

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.wo, self.bo)
    }
}

/// Learned token + position embeddings, summed.
pub fn embed(g: &mut Graph, b: &Binding, tok_emb: ParamId, pos_emb: ParamId, ids: &[u32], store_rows: (usize, usize)) -> Result<Var> {
    let (vocab, positions) = store_rows;
    if ids.len() > positions {
        return Err(Error::invalid(format!("sequence of {} exceeds {positions} positions", ids.len())));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= vocab) {
        return Err(Error::invalid(format!("token id {bad} outside vocabulary of {vocab}")));
    }
    let rows: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let tok = g.select_rows(b[tok_emb], &rows)?;
    let pos_rows: Vec<usize> = (0..ids.len()).collect();
    let pos = g.select_rows(b[pos_emb], &pos_rows)?;
    g.add(tok, pos)
}

/// `reps · Eᵀ + bias`: output projection tied to the embedding matrix.
pub fn tied_logits(g: &mut Graph, b: &Binding, reps: Var, tok_emb: ParamId, bias: ParamId) -> Result<Var> {
    let et = g.transpose(b[tok_emb])?;
    let logits = g.matmul(reps, et)?;
    g.add_row(logits, b[bias])
}

pub(crate) fn check_shape(store: &ParamStore, id: ParamId, shape: &[usize]) -> Result<()> {
    let p = store.get(id);
    if p.value.shape() != shape {
        return Err(Error::Checkpoint(format!(
            "{} has shape {:?}, expected {shape:?}",
            p.name,
            p.value.shape()
        )));
    }
    Ok(())
}
