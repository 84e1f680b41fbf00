//! Supervised triage classifier: encoder token representations summarized
//! by a stacked BiLSTM, fused with the CLS vector, passed through dendritic
//! layers and a dense softmax.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::encoder::{self, Encoder};
use crate::error::{Error, Result};
use crate::numerics::{rng, Adam, AdamConfig, Binding, Checkpoint, Graph, OptimizerState, ParamId, ParamStore, Rng, Target, Tensor, Var};
use crate::tokenizer::TokenSequence;
use crate::training::{run_epochs, EpochLog};

pub const GROUP: &str = "head";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub hidden_dim: usize,
    pub num_labels: usize,
    pub num_lstm_layers: usize,
    pub num_dd_layers: usize,
    pub use_bilstm: bool,
    pub use_cls: bool,
    pub use_dd: bool,
}

impl HeadConfig {
    /// Three dendritic layers and two BiLSTM layers.
    pub fn new(hidden_dim: usize, num_labels: usize) -> Self {
        HeadConfig {
            hidden_dim,
            num_labels,
            num_lstm_layers: 2,
            num_dd_layers: 3,
            use_bilstm: true,
            use_cls: true,
            use_dd: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.num_labels == 0 {
            return Err(Error::invalid("head dimensions must be positive"));
        }
        if !self.use_bilstm && !self.use_cls {
            return Err(Error::invalid("the head needs the BiLSTM summary, the CLS vector, or both"));
        }
        if self.use_bilstm && self.num_lstm_layers == 0 {
            return Err(Error::invalid("num_lstm_layers must be at least 1"));
        }
        if self.use_dd && self.num_dd_layers == 0 {
            return Err(Error::invalid("num_dd_layers must be at least 1"));
        }
        Ok(())
    }

    /// Width of the fused vector `M = [H ; cls]`.
    pub fn fused_dim(&self) -> usize {
        let h = self.hidden_dim;
        (if self.use_bilstm { 2 * h } else { 0 }) + (if self.use_cls { h } else { 0 })
    }

    fn write_meta(&self, ckpt: &mut Checkpoint) {
        ckpt.set_meta("head.hidden_dim", self.hidden_dim as f64);
        ckpt.set_meta("head.num_labels", self.num_labels as f64);
        ckpt.set_meta("head.num_lstm_layers", self.num_lstm_layers as f64);
        ckpt.set_meta("head.num_dd_layers", self.num_dd_layers as f64);
        ckpt.set_meta("head.use_bilstm", self.use_bilstm as u8 as f64);
        ckpt.set_meta("head.use_cls", self.use_cls as u8 as f64);
        ckpt.set_meta("head.use_dd", self.use_dd as u8 as f64);
    }

    fn read_meta(ckpt: &Checkpoint) -> Result<Self> {
        let c = HeadConfig {
            hidden_dim: ckpt.meta_usize("head.hidden_dim")?,
            num_labels: ckpt.meta_usize("head.num_labels")?,
            num_lstm_layers: ckpt.meta_usize("head.num_lstm_layers")?,
            num_dd_layers: ckpt.meta_usize("head.num_dd_layers")?,
            use_bilstm: ckpt.meta("head.use_bilstm")? != 0.0,
            use_cls: ckpt.meta("head.use_cls")? != 0.0,
            use_dd: ckpt.meta("head.use_dd")? != 0.0,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Copy, Debug)]
struct LstmDir {
    w_ih: ParamId,
    w_hh: ParamId,
    bias: ParamId,
}

#[derive(Clone, Debug)]
pub struct TriageHead {
    pub config: HeadConfig,
    lstm: Vec<[LstmDir; 2]>,
    dd: Vec<ParamId>,
    w_f: ParamId,
    b_f: ParamId,
}

impl TriageHead {
    pub fn new(config: HeadConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        if config.use_bilstm {
            for l in 0..config.num_lstm_layers {
                let input = if l == 0 { h } else { 2 * h };
                for dir in ["fwd", "bwd"] {
                    let p = format!("head.lstm{l}.{dir}");
                    store.add_xavier(format!("{p}.w_ih"), GROUP, input, 4 * h, rng)?;
                    store.add_xavier(format!("{p}.w_hh"), GROUP, h, 4 * h, rng)?;
                    store.add_zeros(format!("{p}.bias"), GROUP, &[1, 4 * h])?;
                }
            }
        }
        let mut width = config.fused_dim();
        if config.use_dd {
            for l in 0..config.num_dd_layers {
                store.add_xavier(format!("head.dd{l}"), GROUP, width, h, rng)?;
                width = h;
            }
        }
        store.add_xavier("head.w_f", GROUP, width, config.num_labels, rng)?;
        store.add_zeros("head.b_f", GROUP, &[1, config.num_labels])?;
        Self::from_store(config, store)
    }

    pub fn from_store(config: HeadConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let mut lstm = Vec::new();
        if config.use_bilstm {
            for l in 0..config.num_lstm_layers {
                let dir = |d: &str| -> Result<LstmDir> {
                    let p = format!("head.lstm{l}.{d}");
                    Ok(LstmDir {
                        w_ih: store.id(&format!("{p}.w_ih"))?,
                        w_hh: store.id(&format!("{p}.w_hh"))?,
                        bias: store.id(&format!("{p}.bias"))?,
                    })
                };
                lstm.push([dir("fwd")?, dir("bwd")?]);
            }
        }
        let dd = if config.use_dd {
            (0..config.num_dd_layers).map(|l| store.id(&format!("head.dd{l}"))).collect::<Result<_>>()?
        } else {
            Vec::new()
        };
        let w_f = store.id("head.w_f")?;
        let expected_in = if config.use_dd { config.hidden_dim } else { config.fused_dim() };
        if store.value(w_f).shape() != [expected_in, config.num_labels] {
            return Err(Error::Checkpoint("head.w_f shape does not match the configuration".into()));
        }
        Ok(TriageHead {
            config,
            lstm,
            dd,
            w_f,
            b_f: store.id("head.b_f")?,
        })
    }

    /// Summarizes the real rows of `token_reps` into `[H_fwd ; H_bwd]`.
    pub fn bilstm(&self, g: &mut Graph, b: &Binding, token_reps: Var, mask: &[bool]) -> Result<Var> {
        let real: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        if real.is_empty() {
            return Err(Error::invalid("BiLSTM input has no real tokens"));
        }
        let weights: Vec<[(Var, Var, Var); 2]> = self
            .lstm
            .iter()
            .map(|pair| pair.map(|d| (b[d.w_ih], b[d.w_hh], b[d.bias])))
            .collect();
        let x = g.select_rows(token_reps, &real)?;
        bilstm(g, x, &weights, self.config.hidden_dim)
    }

    /// Class logits for one (already encoded) sequence.
    pub fn logits(&self, g: &mut Graph, b: &Binding, token_reps: Var, mask: &[bool]) -> Result<Var> {
        let mut parts = Vec::with_capacity(2);
        if self.config.use_bilstm {
            parts.push(self.bilstm(g, b, token_reps, mask)?);
        }
        if self.config.use_cls {
            parts.push(g.select_rows(token_reps, &[0])?);
        }
        let m = if parts.len() == 1 { parts[0] } else { fuse(g, parts[0], parts[1])? };
        let d = if self.config.use_dd {
            let ws: Vec<Var> = self.dd.iter().map(|&w| b[w]).collect();
            dendrite(g, m, &ws)?
        } else {
            m
        };
        dense(g, d, b[self.w_f], b[self.b_f])
    }
}

/// Stacked bidirectional LSTM over the rows of `x` (`T × input`). Gate
/// columns are ordered input, forget, cell, output. Returns the final
/// forward state concatenated with the final backward state, `1 × 2h`.
pub fn bilstm(g: &mut Graph, x: Var, layers: &[[(Var, Var, Var); 2]], hidden: usize) -> Result<Var> {
    let steps = g.value(x).rows();
    let mut input = x;
    let mut last = None;
    for layer in layers {
        let fwd = lstm_direction(g, input, layer[0], hidden, false)?;
        let bwd = lstm_direction(g, input, layer[1], hidden, true)?;
        let fwd_final = fwd[steps - 1];
        let bwd_final = bwd[0];
        let f_rows = g.concat_rows(&fwd)?;
        let b_rows = g.concat_rows(&bwd)?;
        input = g.concat_cols(&[f_rows, b_rows])?;
        last = Some((fwd_final, bwd_final));
    }
    let (f, bk) = last.ok_or_else(|| Error::invalid("BiLSTM needs at least one layer"))?;
    g.concat_cols(&[f, bk])
}

/// Hidden states in time order (index `t` is the state after reading row `t`).
fn lstm_direction(g: &mut Graph, x: Var, (w_ih, w_hh, bias): (Var, Var, Var), h: usize, reverse: bool) -> Result<Vec<Var>> {
    let steps = g.value(x).rows();
    let proj = g.matmul(x, w_ih)?;
    let proj = g.add_row(proj, bias)?;
    let mut hs: Vec<Option<Var>> = vec![None; steps];
    let mut state: Option<(Var, Var)> = None;
    let order: Vec<usize> = if reverse { (0..steps).rev().collect() } else { (0..steps).collect() };
    for t in order {
        let mut gates = g.select_rows(proj, &[t])?;
        if let Some((hp, _)) = state {
            let rec = g.matmul(hp, w_hh)?;
            gates = g.add(gates, rec)?;
        }
        let i = g.slice_cols(gates, 0, h)?;
        let i = g.sigmoid(i)?;
        let f = g.slice_cols(gates, h, h)?;
        let f = g.sigmoid(f)?;
        let c_in = g.slice_cols(gates, 2 * h, h)?;
        let c_in = g.tanh(c_in)?;
        let o = g.slice_cols(gates, 3 * h, h)?;
        let o = g.sigmoid(o)?;
        let ic = g.mul(i, c_in)?;
        let c = match state {
            Some((_, cp)) => {
                let fc = g.mul(f, cp)?;
                g.add(fc, ic)?
            }
            None => ic,
        };
        let tc = g.tanh(c)?;
        let hn = g.mul(o, tc)?;
        hs[t] = Some(hn);
        state = Some((hn, c));
    }
    Ok(hs.into_iter().map(|v| v.expect("every step visited")).collect())
}

/// `M = [H ; cls]`.
pub fn fuse(g: &mut Graph, h: Var, cls: Var) -> Result<Var> {
    if g.value(h).rows() != 1 || g.value(cls).rows() != 1 {
        return Err(Error::shape("fuse", "both inputs must be single rows"));
    }
    g.concat_cols(&[h, cls])
}

/// Dendritic stack: `D⁰ = M`, `Dˡ = (Dˡ⁻¹ ⊙ Dˡ⁻¹) · Wˡ` with `Wˡ` of shape
/// `d_in × d_out`.
pub fn dendrite(g: &mut Graph, m: Var, weights: &[Var]) -> Result<Var> {
    let mut d = m;
    for &w in weights {
        let sq = g.square(d)?;
        d = g.matmul(sq, w)?;
    }
    Ok(d)
}

/// `D · W_F + b_F` (pre-softmax).
pub fn dense(g: &mut Graph, d: Var, w_f: Var, b_f: Var) -> Result<Var> {
    let z = g.matmul(d, w_f)?;
    g.add_row(z, b_f)
}

/// `softmax(D · W_F + b_F)`.
pub fn classify(g: &mut Graph, d: Var, w_f: Var, b_f: Var) -> Result<Var> {
    let z = dense(g, d, w_f, b_f)?;
    g.softmax_rows(z, None)
}

/// Evaluates [`fuse`] on plain vectors.
pub fn fuse_vectors(h: &Tensor, cls: &Tensor) -> Result<Tensor> {
    let mut g = Graph::new();
    let (hv, cv) = (g.constant(h.clone()), g.constant(cls.clone()));
    let m = fuse(&mut g, hv, cv)?;
    Ok(Tensor::vector(g.value(m).data().to_vec()))
}

/// Evaluates [`dendrite`] on plain tensors.
pub fn dendrite_vectors(m: &Tensor, weights: &[Tensor]) -> Result<Tensor> {
    let mut g = Graph::new();
    let mv = g.constant(m.clone());
    let ws: Vec<Var> = weights.iter().map(|w| g.constant(w.clone())).collect();
    let d = dendrite(&mut g, mv, &ws)?;
    Ok(Tensor::vector(g.value(d).data().to_vec()))
}

/// Evaluates [`classify`] on plain tensors.
pub fn classify_vectors(d: &Tensor, w_f: &Tensor, b_f: &Tensor) -> Result<Vec<f64>> {
    let mut g = Graph::new();
    let (dv, wv, bv) = (g.constant(d.clone()), g.constant(w_f.clone()), g.constant(b_f.clone()));
    let p = classify(&mut g, dv, wv, bv)?;
    Ok(g.value(p).data().to_vec())
}

#[derive(Clone, Debug)]
pub struct TriageModel {
    pub encoder: Encoder,
    pub head: TriageHead,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledExample {
    pub tokens: TokenSequence,
    pub label: usize,
}

impl TriageModel {
    pub fn new(encoder: Encoder, head_config: HeadConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        if head_config.hidden_dim != encoder.config.hidden_dim {
            return Err(Error::invalid("head hidden_dim must equal the encoder hidden_dim"));
        }
        let head = TriageHead::new(head_config, store, rng)?;
        Ok(TriageModel { encoder, head })
    }

    pub fn logits(&self, g: &mut Graph, b: &Binding, tokens: &TokenSequence) -> Result<Var> {
        let reps = self.encoder.forward(g, b, tokens)?;
        self.head.logits(g, b, reps, &tokens.attention_mask)
    }

    /// Summed cross-entropy over a batch.
    pub fn loss_sum(&self, g: &mut Graph, b: &Binding, batch: &[&LabeledExample]) -> Result<Var> {
        let mut rows = Vec::with_capacity(batch.len());
        for ex in batch {
            if ex.label >= self.head.config.num_labels {
                return Err(Error::invalid(format!("label {} outside {} classes", ex.label, self.head.config.num_labels)));
            }
            rows.push(self.logits(g, b, &ex.tokens)?);
        }
        let all = g.concat_rows(&rows)?;
        let targets: Vec<Target> = batch
            .iter()
            .enumerate()
            .map(|(row, ex)| Target {
                row,
                class: ex.label,
                weight: 1.0,
            })
            .collect();
        g.cross_entropy(all, &targets)
    }

    pub fn predict_proba(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let z = self.logits(&mut g, &b, tokens)?;
        let p = g.softmax_rows(z, None)?;
        Ok(g.value(p).data().to_vec())
    }

    pub fn predict(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<usize> {
        Ok(argmax(&self.predict_proba(store, tokens)?))
    }

    pub fn to_checkpoint(&self, store: &ParamStore) -> Checkpoint {
        let mut ckpt = encoder::to_checkpoint(&self.encoder, store);
        self.head.config.write_meta(&mut ckpt);
        for (_, p) in store.iter().filter(|(_, p)| p.name.starts_with("head.")) {
            ckpt.insert(p.name.clone(), p.value.clone());
        }
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<Self> {
        let encoder = encoder::from_checkpoint(ckpt, store)?;
        let config = HeadConfig::read_meta(ckpt)?;
        let head = TriageHead::new(config, store, &mut rng(0))?;
        store.load_from(ckpt)?;
        Ok(TriageModel { encoder, head })
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TriageTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Learning rate of the encoder group.
    pub encoder_lr: f64,
    /// Learning rate of the BiLSTM / dendritic / dense group.
    pub head_lr: f64,
    pub freeze_encoder: bool,
    pub seed: u64,
    /// Stop as soon as an epoch ends with perfect training accuracy.
    pub stop_at_perfect: bool,
}

impl Default for TriageTrainConfig {
    fn default() -> Self {
        TriageTrainConfig {
            epochs: 50,
            batch_size: 16,
            encoder_lr: 5e-5,
            head_lr: 2e-4,
            freeze_encoder: false,
            seed: 0,
            stop_at_perfect: false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss: f64,
    pub train_accuracy: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct TrainOutcome {
    pub log: Vec<EpochLog>,
    pub metrics: Vec<EpochMetrics>,
    pub optimizer: OptimizerState,
}

/// Joint fine-tuning with two learning-rate groups.
pub fn train_supervised(model: &TriageModel, store: &mut ParamStore, data: &[LabeledExample], cfg: &TriageTrainConfig) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    if let Some(bad) = data.iter().find(|e| e.label >= model.head.config.num_labels) {
        return Err(Error::invalid(format!("label {} outside the label set", bad.label)));
    }
    store.set_group_frozen(encoder::GROUP, cfg.freeze_encoder);
    let mut adam = Adam::new(AdamConfig::default())
        .with_group(encoder::GROUP, cfg.encoder_lr)
        .with_group(GROUP, cfg.head_lr);
    let mut r = rng(cfg.seed);
    let mut log = Vec::new();
    let mut metrics = Vec::new();
    for epoch in 1..=cfg.epochs {
        let mut one = run_epochs(store, &mut adam, data.len(), 1, cfg.batch_size, cfg.head_lr, &mut r, |g, b, batch, _| {
            let refs: Vec<&LabeledExample> = batch.iter().map(|&i| &data[i]).collect();
            Ok(Some((model.loss_sum(g, b, &refs)?, refs.len())))
        })
        .map_err(|e| match e {
            Error::Diverged { .. } => Error::Diverged { epoch },
            other => other,
        })?;
        let mut entry = one.remove(0);
        entry.epoch = epoch;
        let preds = data.iter().map(|e| model.predict(store, &e.tokens)).collect::<Result<Vec<_>>>()?;
        let correct = preds.iter().zip(data).filter(|(p, e)| **p == e.label).count();
        let acc = correct as f64 / data.len() as f64;
        metrics.push(EpochMetrics {
            epoch,
            loss: entry.loss,
            train_accuracy: acc,
        });
        log.push(entry);
        if cfg.stop_at_perfect && correct == data.len() {
            break;
        }
    }
    let optimizer = adam.state(store);
    store.set_group_frozen(encoder::GROUP, false);
    Ok(TrainOutcome { log, metrics, optimizer })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClsMetrics {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    /// `confusion[gold][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

/// Accuracy plus macro precision / recall / F1 averaged over the classes
/// that occur in `gold`.
pub fn evaluate(predictions: &[usize], gold: &[usize]) -> Result<ClsMetrics> {
    if predictions.is_empty() || predictions.len() != gold.len() {
        return Err(Error::invalid(format!(
            "need equal, non-empty prediction and gold lists (got {} and {})",
            predictions.len(),
            gold.len()
        )));
    }
    let k = predictions.iter().chain(gold).max().map_or(0, |m| m + 1);
    let mut confusion = vec![vec![0usize; k]; k];
    for (&p, &t) in predictions.iter().zip(gold) {
        confusion[t][p] += 1;
    }
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();
    let (mut sp, mut sr, mut sf, mut n) = (0.0, 0.0, 0.0, 0usize);
    for c in 0..k {
        let support: usize = confusion[c].iter().sum();
        if support == 0 {
            continue;
        }
        let tp = confusion[c][c] as f64;
        let predicted: usize = (0..k).map(|r| confusion[r][c]).sum();
        let p = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
        let r = tp / support as f64;
        let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
        sp += p;
        sr += r;
        sf += f;
        n += 1;
    }
    let n = n as f64;
    Ok(ClsMetrics {
        accuracy: correct as f64 / predictions.len() as f64,
        macro_precision: sp / n,
        macro_recall: sr / n,
        macro_f1: sf / n,
        confusion,
    })
}

/// Label string → class id, ids assigned in sorted label order.
pub fn label_map<'a>(labels: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut set: Vec<&str> = labels.into_iter().collect();
    set.sort_unstable();
    set.dedup();
    set.into_iter().enumerate().map(|(i, l)| (l.to_string(), i)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::EncoderConfig;
    use crate::numerics::{grad_check, GradCheckOptions};
    use crate::tokenizer::{CLS, PAD, SEP};

    fn small_model(store: &mut ParamStore, seed: u64, head: impl FnOnce(&mut HeadConfig)) -> TriageModel {
        let mut r = rng(seed);
        let enc = Encoder::new(
            EncoderConfig {
                vocab_size: 12,
                max_len: 8,
                hidden_dim: 4,
                num_layers: 1,
                num_heads: 2,
                ffn_dim: 8,
                mask_rate: 0.15,
            },
            store,
            &mut r,
        )
        .unwrap();
        let mut hc = HeadConfig::new(4, 3);
        head(&mut hc);
        TriageModel::new(enc, hc, store, &mut r).unwrap()
    }

    #[test]
    fn bilstm_width_and_zero_fixed_point() {
        let mut store = ParamStore::new();
        let model = small_model(&mut store, 1, |_| {});
        let tokens = TokenSequence::from_ids(vec![CLS, 8, 9, SEP, PAD]);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let reps = model.encoder.forward(&mut g, &b, &tokens).unwrap();
        let h = model.head.bilstm(&mut g, &b, reps, &tokens.attention_mask).unwrap();
        assert_eq!(g.value(h).dims2(), (1, 8));
        assert!(model.head.bilstm(&mut g, &b, reps, &[false; 5]).is_err());

        let names: Vec<ParamId> = store.iter().filter(|(_, p)| p.name.starts_with("head.lstm")).map(|(id, _)| id).collect();
        for id in names {
            let zero = Tensor::zeros(store.value(id).shape());
            store.set_value(id, zero).unwrap();
        }
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let reps = model.encoder.forward(&mut g, &b, &tokens).unwrap();
        let h = model.head.bilstm(&mut g, &b, reps, &tokens.attention_mask).unwrap();
        assert!(g.value(h).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fuse_examples() {
        let m = fuse_vectors(&Tensor::vector(vec![1.0, 2.0]), &Tensor::vector(vec![3.0])).unwrap();
        assert_eq!(m.data(), &[1.0, 2.0, 3.0]);
        let z = fuse_vectors(&Tensor::vector(vec![0.0; 4]), &Tensor::vector(vec![0.0; 2])).unwrap();
        assert_eq!(z.data(), &[0.0; 6]);
    }

    #[test]
    fn dendrite_examples() {
        let m = Tensor::vector(vec![1.0, 2.0, 3.0]);
        assert_eq!(dendrite_vectors(&m, &[Tensor::identity(3)]).unwrap().data(), &[1.0, 4.0, 9.0]);
        // `d_in × d_out` layout: the single-output sum is a 3 × 1 column of ones
        let ones = Tensor::matrix(3, 1, vec![1.0; 3]).unwrap();
        assert_eq!(dendrite_vectors(&m, &[ones]).unwrap().data(), &[14.0]);
        let zero = Tensor::vector(vec![0.0; 3]);
        let deep = vec![Tensor::identity(3), Tensor::identity(3), Tensor::identity(3)];
        assert_eq!(dendrite_vectors(&zero, &deep).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn classify_examples() {
        let d = Tensor::vector(vec![0.3, -1.2]);
        let p = classify_vectors(&d, &Tensor::zeros(&[2, 4]), &Tensor::zeros(&[1, 4])).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let w = Tensor::matrix(2, 3, vec![0.1, -0.4, 0.9, 1.1, 0.2, -0.3]).unwrap();
        let b = Tensor::row(vec![0.5, 0.0, -0.5]);
        let p1 = classify_vectors(&d, &w, &b).unwrap();
        let b2 = Tensor::row(vec![7.5, 7.0, 6.5]);
        let p2 = classify_vectors(&d, &w, &b2).unwrap();
        assert_eq!(argmax(&p1), argmax(&p2));
        assert!((p1.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn evaluate_examples() {
        let m = evaluate(&[0, 1, 1], &[0, 1, 0]).unwrap();
        assert!((m.accuracy - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.macro_precision - 0.75).abs() < 1e-15);
        assert!((m.macro_recall - 0.75).abs() < 1e-15);
        assert!((m.macro_f1 - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 1]]);
        let p = evaluate(&[2, 0, 1], &[2, 0, 1]).unwrap();
        assert_eq!((p.accuracy, p.macro_precision, p.macro_recall, p.macro_f1), (1.0, 1.0, 1.0, 1.0));
        assert!(evaluate(&[], &[]).is_err());
        assert!(evaluate(&[1], &[1, 2]).is_err());
    }

    #[test]
    fn output_is_a_distribution_and_gradients_check() {
        for (frozen, seed) in [(false, 3), (true, 4)] {
            let mut store = ParamStore::new();
            let model = small_model(&mut store, seed, |_| {});
            store.set_group_frozen(encoder::GROUP, frozen);
            let ex = LabeledExample {
                tokens: TokenSequence::from_ids(vec![CLS, 8, 9, 10, SEP, PAD]),
                label: 2,
            };
            let p = model.predict_proba(&store, &ex.tokens).unwrap();
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            let report = grad_check(&mut store, |g, b| model.loss_sum(g, b, &[&ex]), GradCheckOptions::default()).unwrap();
            assert!(report.max_relative_error < 1e-4, "frozen={frozen}: {report:?}");
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_predictions() {
        let mut store = ParamStore::new();
        let model = small_model(&mut store, 5, |h| h.use_dd = false);
        let ckpt = model.to_checkpoint(&store);
        let mut store2 = ParamStore::new();
        let model2 = TriageModel::from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), &mut store2).unwrap();
        assert_eq!(model2.head.config, model.head.config);
        let t = TokenSequence::from_ids(vec![CLS, 8, SEP]);
        assert_eq!(model.predict_proba(&store, &t).unwrap(), model2.predict_proba(&store2, &t).unwrap());
    }

    #[test]
    fn label_map_is_sorted() {
        let m = label_map(["内科", "外科", "内科", "儿科"]);
        assert_eq!(m.len(), 3);
        assert_eq!(m.values().copied().collect::<Vec<_>>(), vec![0, 1, 2]);
    }
}
