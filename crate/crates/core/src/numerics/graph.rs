//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Graph`] records every operation as it is evaluated. Nodes are
//! appended in evaluation order, so the node list is already a topological
//! order and `backward` is a single reverse sweep. Graphs are rebuilt for
//! every training step.
//!
//! All operations work on matrices; a rank-1 value is viewed as a single
//! row. Every forward result is checked for NaN/Inf.

use crate::error::{Error, Result};
use crate::numerics::tensor::{matmul_into, moments, softmax_in_place, Tensor};

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Gelu(Var),
    SoftmaxRows(Var),
    LayerNormRows {
        x: Var,
        gain: Var,
        bias: Var,
        normalized: Vec<f64>,
        inv_std: Vec<f64>,
    },
    ConcatCols(Vec<Var>),
    SliceCols { x: Var, start: usize },
    ConcatRows(Vec<Var>),
    SelectRows { x: Var, rows: Vec<usize> },
    Transpose(Var),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        targets: Vec<Target>,
        probs: Vec<f64>,
    },
}

/// One term of a fused softmax cross-entropy: `weight · −log softmax(row)[class]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Target {
    pub row: usize,
    pub class: usize,
    pub weight: f64,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
    grad: Option<Tensor>,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    /// A value whose gradient is tracked.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    pub(crate) fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by [`Graph::backward`], if `v` requires one.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].grad.as_ref()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dims2()
    }

    fn push(&mut self, op: &'static str, value: Tensor, kind: Op, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op: kind,
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    fn same_size(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (da, db) = (self.dims(a), self.dims(b));
        if da != db {
            return Err(Error::shape(op, format!("{da:?} vs {db:?}")));
        }
        Ok(da)
    }

    fn zip_with(&mut self, a: Var, b: Var, op: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (r, c) = self.same_size(op, a, b)?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::matrix(r, c, data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "add", |x, y| x + y)?;
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "sub", |x, y| x - y)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.zip_with(a, b, "mul", |x, y| x * y)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    /// Adds a `1 × n` row to every row of an `m × n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (m, n) = self.dims(a);
        let (rr, rc) = self.dims(row);
        if rr != 1 || rc != n {
            return Err(Error::shape("add_row", format!("({m}, {n}) + ({rr}, {rc})")));
        }
        let bias = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for chunk in data.chunks_mut(n) {
            for (x, b) in chunk.iter_mut().zip(bias) {
                *x += b;
            }
        }
        let value = Tensor::matrix(m, n, data)?;
        self.push("add_row", value, Op::AddRow(a, row), &[a, row])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        let value = Tensor::matrix(r, c, self.value(a).data().iter().map(|x| x * s).collect())?;
        self.push("scale", value, Op::Scale(a, s), &[a])
    }

    fn unary(&mut self, a: Var, op: &'static str, kind: Op, f: impl Fn(f64) -> f64) -> Result<Var> {
        let (r, c) = self.dims(a);
        let value = Tensor::matrix(r, c, self.value(a).data().iter().map(|&x| f(x)).collect())?;
        self.push(op, value, kind, &[a])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "tanh", Op::Tanh(a), f64::tanh)
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "sigmoid", Op::Sigmoid(a), sigmoid)
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, a: Var) -> Result<Var> {
        self.unary(a, "gelu", Op::Gelu(a), |x| {
            0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
        })
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        self.mul(a, a)
    }

    /// Row-wise softmax. `allowed`, when given, is a row-major `m × n` mask;
    /// disallowed entries get probability zero. A row with no allowed entry
    /// puts all of its mass on column 0.
    pub fn softmax_rows(&mut self, a: Var, allowed: Option<&[bool]>) -> Result<Var> {
        let (r, c) = self.dims(a);
        if let Some(mask) = allowed {
            if mask.len() != r * c {
                return Err(Error::shape("softmax_rows", "mask size"));
            }
        }
        let mut data = self.value(a).data().to_vec();
        for i in 0..r {
            let row = &mut data[i * c..(i + 1) * c];
            match allowed {
                None => softmax_in_place(row),
                Some(mask) => {
                    let m = &mask[i * c..(i + 1) * c];
                    if !m.iter().any(|&b| b) {
                        row.iter_mut().for_each(|x| *x = 0.0);
                        row[0] = 1.0;
                        continue;
                    }
                    let max = row
                        .iter()
                        .zip(m)
                        .filter(|(_, &ok)| ok)
                        .map(|(&x, _)| x)
                        .fold(f64::NEG_INFINITY, f64::max);
                    let mut total = 0.0;
                    for (x, &ok) in row.iter_mut().zip(m) {
                        *x = if ok { (*x - max).exp() } else { 0.0 };
                        total += *x;
                    }
                    row.iter_mut().for_each(|x| *x /= total);
                }
            }
        }
        let value = Tensor::matrix(r, c, data)?;
        self.push("softmax_rows", value, Op::SoftmaxRows(a), &[a])
    }

    pub fn layer_norm_rows(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims(x);
        if self.value(gain).len() != c || self.value(bias).len() != c {
            return Err(Error::shape("layer_norm", "gain/bias width"));
        }
        let xs = self.value(x).data();
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let mut normalized = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &xs[i * c..(i + 1) * c];
            let (mean, is) = moments(row, eps);
            inv_std[i] = is;
            for j in 0..c {
                let n = (row[j] - mean) * is;
                normalized[i * c + j] = n;
                out[i * c + j] = n * g[j] + b[j];
            }
        }
        let value = Tensor::matrix(r, c, out)?;
        self.push(
            "layer_norm",
            value,
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            },
            &[x, gain, bias],
        )
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.dims(parts[0]).0;
        if parts.iter().any(|&p| self.dims(p).0 != r) {
            return Err(Error::shape("concat_cols", "row counts differ"));
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for &p in parts {
                let t = self.value(p);
                data.extend_from_slice(t.row_slice(i));
            }
        }
        let value = Tensor::matrix(r, total, data)?;
        self.push("concat_cols", value, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = self.dims(x);
        if len == 0 || start + len > c {
            return Err(Error::shape("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&t.row_slice(i)[start..start + len]);
        }
        let value = Tensor::matrix(r, len, data)?;
        self.push("slice_cols", value, Op::SliceCols { x, start }, &[x])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.dims(parts[0]).1;
        if parts.iter().any(|&p| self.dims(p).1 != c) {
            return Err(Error::shape("concat_rows", "column counts differ"));
        }
        let mut data = Vec::new();
        for &p in parts {
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(data.len() / c, c, data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Gathers rows by index (used for embedding lookups).
    pub fn select_rows(&mut self, x: Var, rows: &[usize]) -> Result<Var> {
        let (r, c) = self.dims(x);
        if rows.is_empty() {
            return Err(Error::shape("select_rows", "no rows selected"));
        }
        if let Some(&bad) = rows.iter().find(|&&i| i >= r) {
            return Err(Error::shape("select_rows", format!("row {bad} of {r}")));
        }
        let t = self.value(x);
        let mut data = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            data.extend_from_slice(t.row_slice(i));
        }
        let value = Tensor::matrix(rows.len(), c, data)?;
        self.push(
            "select_rows",
            value,
            Op::SelectRows {
                x,
                rows: rows.to_vec(),
            },
            &[x],
        )
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let value = self.value(x).transpose();
        self.push("transpose", value, Op::Transpose(x), &[x])
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let value = Tensor::scalar(self.value(x).sum());
        self.push("sum", value, Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len() as f64;
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n)
    }

    /// Fused softmax + weighted negative log-likelihood over selected rows of
    /// a logit matrix. Returns a scalar.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Target]) -> Result<Var> {
        let (r, c) = self.dims(logits);
        for t in targets {
            if t.row >= r || t.class >= c {
                return Err(Error::shape(
                    "cross_entropy",
                    format!("target ({}, {}) outside ({r}, {c})", t.row, t.class),
                ));
            }
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; targets.len() * c];
        let mut loss = 0.0;
        for (k, t) in targets.iter().enumerate() {
            let row = &x[t.row * c..(t.row + 1) * c];
            let p = &mut probs[k * c..(k + 1) * c];
            p.copy_from_slice(row);
            softmax_in_place(p);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            loss += t.weight * (lse - row[t.class]);
        }
        let value = Tensor::scalar(loss);
        self.push(
            "cross_entropy",
            value,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            &[logits],
        )
    }

    /// Reverse sweep from a scalar `loss`. Gradients are added to whatever
    /// earlier `backward` calls left behind.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let shape = self.value(loss).shape().to_vec();
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(shape));
        }
        if !self.nodes[loss.0].requires_grad {
            return Ok(());
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shape, 1.0));

        for id in (0..=loss.0).rev() {
            let Some(dy) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            self.propagate(id, &dy, &mut grads);
            let node = &mut self.nodes[id];
            match &mut node.grad {
                Some(g) => g.add_assign(&dy),
                None => node.grad = Some(dy.reshape(node.value.shape().to_vec())?),
            }
        }
        Ok(())
    }

    fn propagate(&self, id: usize, dy: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[id];
        let dyd = dy.data();
        let mut send = |v: Var, g: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&g),
                slot @ None => *slot = Some(g),
            }
        };
        let like = |v: Var, data: Vec<f64>| {
            let (r, c) = self.nodes[v.0].value.dims2();
            Tensor::matrix(r, c, data).expect("gradient shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if self.nodes[a.0].requires_grad {
                    let bt = self.value(*b).transpose();
                    let mut da = vec![0.0; m * k];
                    matmul_into(dyd, bt.data(), &mut da, m, n, k);
                    send(*a, like(*a, da));
                }
                if self.nodes[b.0].requires_grad {
                    let at = self.value(*a).transpose();
                    let mut db = vec![0.0; k * n];
                    matmul_into(at.data(), dyd, &mut db, k, m, n);
                    send(*b, like(*b, db));
                }
            }
            Op::Add(a, b) => {
                send(*a, like(*a, dyd.to_vec()));
                send(*b, like(*b, dyd.to_vec()));
            }
            Op::Sub(a, b) => {
                send(*a, like(*a, dyd.to_vec()));
                send(*b, like(*b, dyd.iter().map(|x| -x).collect()));
            }
            Op::AddRow(a, row) => {
                send(*a, like(*a, dyd.to_vec()));
                let n = self.dims(*row).1;
                let mut dr = vec![0.0; n];
                for chunk in dyd.chunks(n) {
                    for (d, g) in dr.iter_mut().zip(chunk) {
                        *d += g;
                    }
                }
                send(*row, like(*row, dr));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if a == b {
                    send(*a, like(*a, dyd.iter().zip(av).map(|(g, x)| 2.0 * g * x).collect()));
                } else {
                    send(*a, like(*a, dyd.iter().zip(bv).map(|(g, y)| g * y).collect()));
                    send(*b, like(*b, dyd.iter().zip(av).map(|(g, x)| g * x).collect()));
                }
            }
            Op::Scale(a, s) => send(*a, like(*a, dyd.iter().map(|g| g * s).collect())),
            Op::Tanh(a) => {
                let y = node.value.data();
                send(*a, like(*a, dyd.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect()));
            }
            Op::Sigmoid(a) => {
                let y = node.value.data();
                send(*a, like(*a, dyd.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect()));
            }
            Op::Gelu(a) => {
                let x = self.value(*a).data();
                let d = dyd
                    .iter()
                    .zip(x)
                    .map(|(g, &x)| {
                        let u = GELU_C * (x + 0.044715 * x * x * x);
                        let t = u.tanh();
                        let du = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                        g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du)
                    })
                    .collect();
                send(*a, like(*a, d));
            }
            Op::SoftmaxRows(a) => {
                let (r, c) = node.value.dims2();
                let y = node.value.data();
                let mut dx = vec![0.0; r * c];
                for i in 0..r {
                    let ys = &y[i * c..(i + 1) * c];
                    let gs = &dyd[i * c..(i + 1) * c];
                    let dot: f64 = ys.iter().zip(gs).map(|(y, g)| y * g).sum();
                    for j in 0..c {
                        dx[i * c + j] = ys[j] * (gs[j] - dot);
                    }
                }
                send(*a, like(*a, dx));
            }
            Op::LayerNormRows {
                x,
                gain,
                bias,
                normalized,
                inv_std,
            } => {
                let (r, c) = node.value.dims2();
                let g = self.value(*gain).data();
                let mut dg = vec![0.0; c];
                let mut db = vec![0.0; c];
                let mut dx = vec![0.0; r * c];
                let n = c as f64;
                for i in 0..r {
                    let xh = &normalized[i * c..(i + 1) * c];
                    let gy = &dyd[i * c..(i + 1) * c];
                    let mut sum_dxh = 0.0;
                    let mut sum_dxh_xh = 0.0;
                    for j in 0..c {
                        dg[j] += gy[j] * xh[j];
                        db[j] += gy[j];
                        let dxh = gy[j] * g[j];
                        sum_dxh += dxh;
                        sum_dxh_xh += dxh * xh[j];
                    }
                    for j in 0..c {
                        let dxh = gy[j] * g[j];
                        dx[i * c + j] = inv_std[i] * (dxh - sum_dxh / n - xh[j] * sum_dxh_xh / n);
                    }
                }
                send(*x, like(*x, dx));
                send(*gain, like(*gain, dg));
                send(*bias, like(*bias, db));
            }
            Op::ConcatCols(parts) => {
                let (r, total) = node.value.dims2();
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    let mut d = Vec::with_capacity(r * w);
                    for i in 0..r {
                        d.extend_from_slice(&dyd[i * total + offset..i * total + offset + w]);
                    }
                    send(p, like(p, d));
                    offset += w;
                }
            }
            Op::SliceCols { x, start } => {
                let (r, c) = self.dims(*x);
                let w = node.value.dims2().1;
                let mut d = vec![0.0; r * c];
                for i in 0..r {
                    d[i * c + start..i * c + start + w].copy_from_slice(&dyd[i * w..(i + 1) * w]);
                }
                send(*x, like(*x, d));
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    send(p, like(p, dyd[offset..offset + n].to_vec()));
                    offset += n;
                }
            }
            Op::SelectRows { x, rows } => {
                let (r, c) = self.dims(*x);
                let mut d = vec![0.0; r * c];
                for (k, &i) in rows.iter().enumerate() {
                    for j in 0..c {
                        d[i * c + j] += dyd[k * c + j];
                    }
                }
                send(*x, like(*x, d));
            }
            Op::Transpose(x) => {
                let (r, c) = node.value.dims2();
                let t = Tensor::matrix(r, c, dyd.to_vec()).expect("shape").transpose();
                send(*x, like(*x, t.into_data()));
            }
            Op::Sum(x) => {
                let n = self.value(*x).len();
                send(*x, like(*x, vec![dyd[0]; n]));
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let (r, c) = self.dims(*logits);
                let mut d = vec![0.0; r * c];
                for (k, t) in targets.iter().enumerate() {
                    let p = &probs[k * c..(k + 1) * c];
                    let w = t.weight * dyd[0];
                    for j in 0..c {
                        d[t.row * c + j] += w * p[j];
                    }
                    d[t.row * c + t.class] -= w;
                }
                send(*logits, like(*logits, d));
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 9.0]]).unwrap());
        let s = g.sum(x).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(x).unwrap().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn square_gradient_is_two_x() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(1.75));
        let y = g.mul(x, x).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[3.5]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(2.0));
        let y = g.square(x).unwrap();
        g.backward(y).unwrap();
        g.backward(y).unwrap();
        assert_eq!(g.grad(x).unwrap().data(), &[8.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::row(vec![1.0, 2.0]));
        assert!(matches!(g.backward(x), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn non_finite_forward_is_an_error() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::scalar(f64::MAX));
        assert!(matches!(g.scale(x, 10.0), Err(Error::NonFinite { .. })));
    }

    #[test]
    fn masked_softmax_fallback_and_mask() {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::from_rows(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]).unwrap());
        let mask = [true, false, true, false, false, false];
        let y = g.softmax_rows(x, Some(&mask)).unwrap();
        let v = g.value(y).data();
        assert_eq!(v[1], 0.0);
        assert!((v[0] + v[2] - 1.0).abs() < 1e-15);
        assert_eq!(&v[3..], &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::row(vec![1.0, 2.0]));
        let x = g.leaf(Tensor::row(vec![3.0, 4.0]));
        let y = g.mul(c, x).unwrap();
        let s = g.sum(y).unwrap();
        g.backward(s).unwrap();
        assert!(g.grad(c).is_none());
        assert_eq!(g.grad(x).unwrap().data(), &[1.0, 2.0]);
    }
}
