//! Bidirectional transformer encoder with a masked-language-model head.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{rng, Adam, AdamConfig, Binding, Checkpoint, Graph, ParamId, ParamStore, Rng, Target, Tensor, Var};
use crate::tokenizer::{is_special, Mode, TokenSequence, Vocab, MASK, NUM_RESERVED};
use crate::training::{run_epochs, EpochLog};
use crate::transformer::{check_shape, embed, tied_logits, AttnMask, BlockDims, TransformerLayer};

pub const GROUP: &str = "encoder";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub mask_rate: f64,
}

impl EncoderConfig {
    /// Desk-scale defaults: 64 wide, 2 layers, 2 heads, 64 positions.
    pub fn desk(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            max_len: 64,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 256,
            mask_rate: 0.15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block().validate()?;
        if self.vocab_size < NUM_RESERVED {
            return Err(Error::invalid(format!("vocab_size {} is below the reserved block", self.vocab_size)));
        }
        if self.max_len < 3 || self.num_layers == 0 {
            return Err(Error::invalid("encoder needs max_len >= 3 and at least one layer"));
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(Error::invalid(format!("mask_rate must be in (0, 1), got {}", self.mask_rate)));
        }
        Ok(())
    }

    pub fn block(&self) -> BlockDims {
        BlockDims {
            hidden_dim: self.hidden_dim,
            num_heads: self.num_heads,
            ffn_dim: self.ffn_dim,
        }
    }

    pub fn write_meta(&self, ckpt: &mut Checkpoint) {
        ckpt.set_meta("encoder.vocab_size", self.vocab_size as f64);
        ckpt.set_meta("encoder.max_len", self.max_len as f64);
        ckpt.set_meta("encoder.hidden_dim", self.hidden_dim as f64);
        ckpt.set_meta("encoder.num_layers", self.num_layers as f64);
        ckpt.set_meta("encoder.num_heads", self.num_heads as f64);
        ckpt.set_meta("encoder.ffn_dim", self.ffn_dim as f64);
        ckpt.set_meta("encoder.mask_rate", self.mask_rate);
    }

    pub fn read_meta(ckpt: &Checkpoint) -> Result<Self> {
        let c = EncoderConfig {
            vocab_size: ckpt.meta_usize("encoder.vocab_size")?,
            max_len: ckpt.meta_usize("encoder.max_len")?,
            hidden_dim: ckpt.meta_usize("encoder.hidden_dim")?,
            num_layers: ckpt.meta_usize("encoder.num_layers")?,
            num_heads: ckpt.meta_usize("encoder.num_heads")?,
            ffn_dim: ckpt.meta_usize("encoder.ffn_dim")?,
            mask_rate: ckpt.meta("encoder.mask_rate")?,
        };
        c.validate()?;
        Ok(c)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub cls_vector: Tensor,
    pub token_reps: Tensor,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
    pub tok_emb: ParamId,
    pub pos_emb: ParamId,
    pub mlm_bias: ParamId,
    layers: Vec<TransformerLayer>,
}

impl Encoder {
    pub fn new(config: EncoderConfig, store: &mut ParamStore, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_dim;
        store.add_xavier("encoder.tok_emb", GROUP, config.vocab_size, h, rng)?;
        store.add_xavier("encoder.pos_emb", GROUP, config.max_len, h, rng)?;
        store.add_zeros("encoder.mlm_bias", GROUP, &[1, config.vocab_size])?;
        for l in 0..config.num_layers {
            TransformerLayer::new(store, &format!("encoder.layer{l}"), GROUP, config.block(), rng)?;
        }
        Self::from_store(config, store)
    }

    pub fn from_store(config: EncoderConfig, store: &ParamStore) -> Result<Self> {
        config.validate()?;
        let tok_emb = store.id("encoder.tok_emb")?;
        let pos_emb = store.id("encoder.pos_emb")?;
        let mlm_bias = store.id("encoder.mlm_bias")?;
        check_shape(store, tok_emb, &[config.vocab_size, config.hidden_dim])?;
        check_shape(store, pos_emb, &[config.max_len, config.hidden_dim])?;
        check_shape(store, mlm_bias, &[1, config.vocab_size])?;
        let layers = (0..config.num_layers)
            .map(|l| TransformerLayer::lookup(store, &format!("encoder.layer{l}"), config.block()))
            .collect::<Result<_>>()?;
        Ok(Encoder {
            config,
            tok_emb,
            pos_emb,
            mlm_bias,
            layers,
        })
    }

    pub fn embed(&self, g: &mut Graph, b: &Binding, ids: &[u32]) -> Result<Var> {
        embed(g, b, self.tok_emb, self.pos_emb, ids, (self.config.vocab_size, self.config.max_len))
    }

    /// Final-layer token representations, `len × hidden_dim`.
    pub fn forward(&self, g: &mut Graph, b: &Binding, tokens: &TokenSequence) -> Result<Var> {
        if tokens.ids.len() != tokens.attention_mask.len() {
            return Err(Error::invalid("ids and attention mask lengths differ"));
        }
        let mut x = self.embed(g, b, &tokens.ids)?;
        let mask = AttnMask::key_padding(&tokens.attention_mask);
        for layer in &self.layers {
            x = layer.forward(g, b, x, &mask)?;
        }
        Ok(x)
    }

    /// Vocabulary logits at every position (output projection tied to the
    /// token embeddings).
    pub fn mlm_logits(&self, g: &mut Graph, b: &Binding, reps: Var) -> Result<Var> {
        tied_logits(g, b, reps, self.tok_emb, self.mlm_bias)
    }

    pub fn encode(&self, store: &ParamStore, tokens: &TokenSequence) -> Result<EncoderOutput> {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let reps = self.forward(&mut g, &b, tokens)?;
        let token_reps = g.value(reps).clone();
        let cls_vector = Tensor::vector(token_reps.row_slice(0).to_vec());
        Ok(EncoderOutput { cls_vector, token_reps })
    }

    pub fn layers(&self) -> &[TransformerLayer] {
        &self.layers
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedExample {
    pub corrupted: TokenSequence,
    pub positions: Vec<usize>,
    pub original_ids: Vec<u32>,
}

/// What happened to one selected position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Corruption {
    Masked,
    Random,
    Kept,
}

/// Selects each real, non-special position with probability `rate`; selected
/// positions become `[MASK]` 80% of the time, a random regular token 10%,
/// and stay unchanged 10%.
pub fn mask_tokens(tokens: &TokenSequence, rate: f64, vocab_size: usize, rng: &mut Rng) -> MaskedExample {
    mask_tokens_traced(tokens, rate, vocab_size, rng).0
}

pub fn mask_tokens_traced(tokens: &TokenSequence, rate: f64, vocab_size: usize, rng: &mut Rng) -> (MaskedExample, Vec<Corruption>) {
    let mut corrupted = tokens.clone();
    let mut positions = Vec::new();
    let mut original_ids = Vec::new();
    let mut trace = Vec::new();
    for (i, (&id, &real)) in tokens.ids.iter().zip(&tokens.attention_mask).enumerate() {
        if !real || is_special(id) || rng.gen::<f64>() >= rate {
            continue;
        }
        positions.push(i);
        original_ids.push(id);
        let roll: f64 = rng.gen();
        let kind = if roll < 0.8 {
            corrupted.ids[i] = MASK;
            Corruption::Masked
        } else if roll < 0.9 {
            if vocab_size > NUM_RESERVED {
                corrupted.ids[i] = rng.gen_range(NUM_RESERVED as u32..vocab_size as u32);
            }
            Corruption::Random
        } else {
            Corruption::Kept
        };
        trace.push(kind);
    }
    (
        MaskedExample {
            corrupted,
            positions,
            original_ids,
        },
        trace,
    )
}

/// Summed negative log-likelihood of the original tokens at the masked
/// positions of a batch, with the number of positions. `None` when nothing
/// was masked.
pub fn mlm_loss_sum(encoder: &Encoder, g: &mut Graph, b: &Binding, batch: &[MaskedExample]) -> Result<Option<(Var, usize)>> {
    let mut parts = Vec::new();
    let mut count = 0;
    for ex in batch.iter().filter(|e| !e.positions.is_empty()) {
        let reps = encoder.forward(g, b, &ex.corrupted)?;
        let picked = g.select_rows(reps, &ex.positions)?;
        let logits = encoder.mlm_logits(g, b, picked)?;
        let targets: Vec<Target> = ex
            .original_ids
            .iter()
            .enumerate()
            .map(|(row, &id)| Target {
                row,
                class: id as usize,
                weight: 1.0,
            })
            .collect();
        parts.push(g.cross_entropy(logits, &targets)?);
        count += targets.len();
    }
    if parts.is_empty() {
        log::warn!("MLM batch has no masked positions; skipping");
        return Ok(None);
    }
    let all = g.concat_rows(&parts)?;
    Ok(Some((g.sum(all)?, count)))
}

/// Mean masked-token negative log-likelihood of a batch.
pub fn mlm_loss(encoder: &Encoder, g: &mut Graph, b: &Binding, batch: &[MaskedExample]) -> Result<Option<Var>> {
    match mlm_loss_sum(encoder, g, b, batch)? {
        Some((sum, n)) => Ok(Some(g.scale(sum, 1.0 / n as f64)?)),
        None => Ok(None),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 10,
            batch_size: 8,
            lr: 5e-5,
            seed: 0,
        }
    }
}

/// Masked-language-model training over raw texts. Masks are redrawn every
/// epoch. On divergence the parameters are rolled back to the start of the
/// failing epoch and [`Error::Diverged`] is returned.
pub fn pretrain(encoder: &Encoder, store: &mut ParamStore, vocab: &Vocab, texts: &[String], cfg: &PretrainConfig) -> Result<Vec<EpochLog>> {
    if texts.is_empty() {
        return Err(Error::invalid("pre-training corpus is empty"));
    }
    let seqs = texts
        .iter()
        .map(|t| vocab.encode(t, encoder.config.max_len, Mode::Encoder))
        .collect::<Result<Vec<_>>>()?;
    let mut adam = Adam::new(AdamConfig::default()).with_group(GROUP, cfg.lr);
    let mut r = rng(cfg.seed);
    let rate = encoder.config.mask_rate;
    let vsize = encoder.config.vocab_size;
    run_epochs(store, &mut adam, seqs.len(), cfg.epochs, cfg.batch_size, cfg.lr, &mut r, |g, b, batch, r| {
        let masked: Vec<MaskedExample> = batch.iter().map(|&i| mask_tokens(&seqs[i], rate, vsize, r)).collect();
        mlm_loss_sum(encoder, g, b, &masked)
    })
}

/// Writes encoder parameters and configuration metadata.
pub fn to_checkpoint(encoder: &Encoder, store: &ParamStore) -> Checkpoint {
    let mut ckpt = Checkpoint::new();
    encoder.config.write_meta(&mut ckpt);
    for (_, p) in store.iter().filter(|(_, p)| p.name.starts_with("encoder.")) {
        ckpt.insert(p.name.clone(), p.value.clone());
    }
    ckpt
}

/// Rebuilds an encoder from a checkpoint into `store`.
pub fn from_checkpoint(ckpt: &Checkpoint, store: &mut ParamStore) -> Result<Encoder> {
    let config = EncoderConfig::read_meta(ckpt)?;
    let mut scratch = rng(0);
    let enc = Encoder::new(config, store, &mut scratch)?;
    for p in store.iter_mut() {
        if p.name.starts_with("encoder.") {
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!("tensor {} has the wrong shape", p.name)));
            }
            p.value = t.clone();
        }
    }
    Ok(enc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tokenizer::{CLS, PAD};

    fn tiny(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            max_len: 12,
            hidden_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            mask_rate: 0.15,
        }
    }

    #[test]
    fn config_validation() {
        let mut c = tiny(20);
        c.num_heads = 3;
        assert!(c.validate().is_err());
        let mut c = tiny(20);
        c.mask_rate = 1.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn embed_examples() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(tiny(20), &mut store, &mut rng(1)).unwrap();
        let tok = store.value(enc.tok_emb).clone();
        let pos = store.value(enc.pos_emb).clone();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let x = enc.embed(&mut g, &b, &[PAD, PAD, PAD]).unwrap();
        for r in 0..3 {
            let want: Vec<f64> = tok.row_slice(0).iter().zip(pos.row_slice(r)).map(|(a, b)| a + b).collect();
            assert_eq!(g.value(x).row_slice(r), &want[..]);
        }
        let again = enc.embed(&mut g, &b, &[PAD, PAD, PAD]).unwrap();
        assert_eq!(g.value(x), g.value(again));
        assert!(enc.embed(&mut g, &b, &[1; 13]).is_err());
        assert!(enc.embed(&mut g, &b, &[20]).is_err());

        store.set_value(enc.tok_emb, Tensor::zeros(&[20, 8])).unwrap();
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let x = enc.embed(&mut g, &b, &[3, 9]).unwrap();
        assert_eq!(g.value(x).data(), &pos.data()[..16]);
    }

    #[test]
    fn encode_shapes_and_pad_invariance() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(tiny(20), &mut store, &mut rng(2)).unwrap();
        let mut t = TokenSequence::from_ids(vec![CLS, 9, 10, 3, PAD, PAD, PAD]);
        let out = enc.encode(&store, &t).unwrap();
        assert_eq!(out.cls_vector.shape(), &[8]);
        assert_eq!(out.token_reps.shape(), &[7, 8]);
        t.ids[5] = 17;
        let out2 = enc.encode(&store, &t).unwrap();
        for (a, b) in out.cls_vector.data().iter().zip(out2.cls_vector.data()) {
            assert!((a - b).abs() < 1e-9);
        }
        for r in 0..4 {
            for (a, b) in out.token_reps.row_slice(r).iter().zip(out2.token_reps.row_slice(r)) {
                assert!((a - b).abs() < 1e-9);
            }
        }
        let other = enc.encode(&store, &TokenSequence::from_ids(vec![CLS, 11, 3])).unwrap();
        assert_ne!(other.cls_vector, out.cls_vector);
    }

    #[test]
    fn attention_rows_are_distributions_over_real_keys() {
        let mut store = ParamStore::new();
        let mut r = rng(3);
        let enc = Encoder::new(tiny(20), &mut store, &mut r).unwrap();
        let t = TokenSequence::from_ids(vec![CLS, 9, 10, 3, PAD, PAD]);
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let x = enc.embed(&mut g, &b, &t.ids).unwrap();
        let mask = AttnMask::key_padding(&t.attention_mask);
        let q = g.matmul(x, b[store.id("encoder.layer0.wq").unwrap()]).unwrap();
        let k = g.matmul(x, b[store.id("encoder.layer0.wk").unwrap()]).unwrap();
        let kt = g.transpose(k).unwrap();
        let s = g.matmul(q, kt).unwrap();
        let w = g.softmax_rows(s, Some(mask.as_slice())).unwrap();
        for row in 0..6 {
            let rw = g.value(w).row_slice(row);
            assert!((rw.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(rw[4..].iter().all(|&p| p == 0.0));
        }
    }

    #[test]
    fn masking_examples() {
        let t = TokenSequence::from_ids(vec![CLS, 9, 10, 11, 3, PAD]);
        let m = mask_tokens(&t, 1e-12, 20, &mut rng(0));
        assert!(m.positions.is_empty());
        assert_eq!(m.corrupted, t);
        let a = mask_tokens(&t, 0.5, 20, &mut rng(4));
        let b = mask_tokens(&t, 0.5, 20, &mut rng(4));
        assert_eq!(a, b);
        let all = mask_tokens(&t, 0.999_999, 20, &mut rng(5));
        assert_eq!(all.positions, vec![1, 2, 3]);
        assert_eq!(all.original_ids, vec![9, 10, 11]);
        let only_specials = TokenSequence::from_ids(vec![CLS, 3]);
        assert!(mask_tokens(&only_specials, 0.9, 20, &mut rng(0)).positions.is_empty());
    }

    #[test]
    fn uniform_model_loss_is_ln_v() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(tiny(20), &mut store, &mut rng(6)).unwrap();
        store.set_value(enc.tok_emb, Tensor::zeros(&[20, 8])).unwrap();
        let ex = MaskedExample {
            corrupted: TokenSequence::from_ids(vec![CLS, MASK, 10, 3]),
            positions: vec![1],
            original_ids: vec![9],
        };
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let loss = mlm_loss(&enc, &mut g, &b, &[ex]).unwrap().unwrap();
        assert!((g.scalar(loss) - 20f64.ln()).abs() < 1e-12);
        let empty = MaskedExample {
            corrupted: TokenSequence::from_ids(vec![CLS, 3]),
            positions: vec![],
            original_ids: vec![],
        };
        assert!(mlm_loss(&enc, &mut g, &b, &[empty]).unwrap().is_none());
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut store = ParamStore::new();
        let enc = Encoder::new(tiny(20), &mut store, &mut rng(7)).unwrap();
        let ckpt = to_checkpoint(&enc, &store);
        let mut store2 = ParamStore::new();
        let enc2 = from_checkpoint(&Checkpoint::from_bytes(&ckpt.to_bytes()).unwrap(), &mut store2).unwrap();
        assert_eq!(enc2.config, enc.config);
        let t = TokenSequence::from_ids(vec![CLS, 9, 3]);
        assert_eq!(enc.encode(&store, &t).unwrap(), enc2.encode(&store2, &t).unwrap());
    }
}
