//! Run configuration: defaults, a flat `key = value` file, `--set`
//! overrides and dedicated flags, applied in that order.

use std::path::{Path, PathBuf};

use medkit_core::genmetrics::{Smoothing, TokenMode};
use medkit_core::prompt::DEFAULT_TEMPLATE;
use medkit_core::{Decode, Granularity};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,

    #[serde(skip_serializing_if = "Option::is_none")]
    pub input: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub encoder: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ckpt: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub init: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub graph: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub verbalizer: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generated: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<PathBuf>,
    /// Extra files whose characters join the vocabulary.
    pub extra_texts: Vec<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,

    pub granularity: Granularity,
    pub min_chars: usize,
    pub require_answer: bool,
    pub test_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub small_sample_threshold: Option<usize>,

    pub min_freq: usize,
    pub max_len: usize,
    pub hidden_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub ffn_dim: usize,
    pub mask_rate: f64,
    pub pretrain_epochs: usize,
    pub pretrain_batch_size: usize,
    pub pretrain_lr: f64,

    pub lstm_layers: usize,
    pub dd_layers: usize,
    pub use_bilstm: bool,
    pub use_cls: bool,
    pub use_dd: bool,
    pub triage_epochs: usize,
    pub triage_batch_size: usize,
    pub encoder_lr: f64,
    pub head_lr: f64,
    pub freeze_encoder: bool,

    pub template: String,
    pub include_pad: bool,
    pub prompt_epochs: usize,
    pub prompt_batch_size: usize,
    pub prompt_lr: f64,

    pub dec_hidden_dim: usize,
    pub dec_layers: usize,
    pub dec_heads: usize,
    pub dec_ffn_dim: usize,
    pub context_window: usize,
    pub max_gen_len: usize,
    pub lm_epochs: usize,
    pub lm_lr: f64,
    pub gen_epochs: usize,
    pub gen_lr: f64,
    pub gen_batch_size: usize,
    pub prompt_max_len: usize,
    pub supplement_chars: usize,
    pub use_supplement: bool,
    pub use_knowledge: bool,
    /// `greedy`, `top_k` or `temperature`.
    pub decode: String,
    pub top_k: usize,
    pub temperature: f64,

    pub tokens: TokenMode,
    pub smoothing: Smoothing,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            input: None,
            train: None,
            test: None,
            encoder: None,
            ckpt: None,
            init: None,
            graph: None,
            verbalizer: None,
            generated: None,
            reference: None,
            extra_texts: Vec::new(),
            out: None,
            granularity: Granularity::Coarse,
            min_chars: 10,
            require_answer: true,
            test_fraction: 0.15,
            small_sample_threshold: None,
            min_freq: 1,
            max_len: 64,
            hidden_dim: 64,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 256,
            mask_rate: 0.15,
            pretrain_epochs: 10,
            pretrain_batch_size: 8,
            pretrain_lr: 5e-5,
            lstm_layers: 2,
            dd_layers: 3,
            use_bilstm: true,
            use_cls: true,
            use_dd: true,
            triage_epochs: 50,
            triage_batch_size: 16,
            encoder_lr: 5e-5,
            head_lr: 2e-4,
            freeze_encoder: false,
            template: DEFAULT_TEMPLATE.to_string(),
            include_pad: true,
            prompt_epochs: 20,
            prompt_batch_size: 8,
            prompt_lr: 2e-5,
            dec_hidden_dim: 64,
            dec_layers: 2,
            dec_heads: 2,
            dec_ffn_dim: 256,
            context_window: 128,
            max_gen_len: 64,
            lm_epochs: 10,
            lm_lr: 2.6e-5,
            gen_epochs: 20,
            gen_lr: 2.6e-5,
            gen_batch_size: 8,
            prompt_max_len: 64,
            supplement_chars: 40,
            use_supplement: true,
            use_knowledge: true,
            decode: "greedy".to_string(),
            top_k: 5,
            temperature: 1.0,
            tokens: TokenMode::Chars,
            smoothing: Smoothing::Off,
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

/// Parses the right-hand side of a `--set key=value`. Anything that is not
/// a TOML value is taken as a bare string, so `--set out=runs/a` works.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(raw.to_string())),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Merges the layers and validates the result.
pub fn resolve(file: Option<&Path>, sets: &[String], flags: toml::Table) -> Result<RunConfig, CliError> {
    let mut table = match file {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| invalid(format!("config {}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for s in sets {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| invalid(format!("--set expects KEY=VALUE, got {s:?}")))?;
        table.insert(k.trim().to_string(), parse_value(v.trim()));
    }
    table.extend(flags);
    let cfg: RunConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| invalid(format!("configuration: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        let positive = [
            ("min_freq", self.min_freq),
            ("max_len", self.max_len),
            ("hidden_dim", self.hidden_dim),
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("ffn_dim", self.ffn_dim),
            ("pretrain_batch_size", self.pretrain_batch_size),
            ("triage_batch_size", self.triage_batch_size),
            ("prompt_batch_size", self.prompt_batch_size),
            ("dec_hidden_dim", self.dec_hidden_dim),
            ("dec_layers", self.dec_layers),
            ("dec_heads", self.dec_heads),
            ("dec_ffn_dim", self.dec_ffn_dim),
            ("context_window", self.context_window),
            ("gen_batch_size", self.gen_batch_size),
            ("prompt_max_len", self.prompt_max_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(invalid(format!("{name} must be positive")));
            }
        }
        let rates = [
            ("pretrain_lr", self.pretrain_lr),
            ("encoder_lr", self.encoder_lr),
            ("head_lr", self.head_lr),
            ("prompt_lr", self.prompt_lr),
            ("lm_lr", self.lm_lr),
            ("gen_lr", self.gen_lr),
        ];
        for (name, v) in rates {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("{name} must be a positive number")));
            }
        }
        if !(self.mask_rate > 0.0 && self.mask_rate < 1.0) {
            return Err(invalid("mask_rate must be in (0, 1)"));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(invalid("test_fraction must be in (0, 1)"));
        }
        if self.prompt_max_len > self.context_window {
            return Err(invalid("prompt_max_len cannot exceed context_window"));
        }
        self.decode_strategy()?;
        Ok(())
    }

    pub fn decode_strategy(&self) -> Result<Decode, CliError> {
        let d = match self.decode.as_str() {
            "greedy" => Decode::Greedy,
            "top_k" => Decode::TopK(self.top_k),
            "temperature" => Decode::Temperature(self.temperature),
            other => return Err(invalid(format!("unknown decode strategy {other:?} (greedy, top_k, temperature)"))),
        };
        d.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(d)
    }

    /// The path behind a required flag, or a usage error naming it.
    pub fn need<'a>(&self, value: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
        value
            .as_deref()
            .ok_or_else(|| CliError::Usage(format!("missing --{flag} (or `{}` in the config file)", flag.replace('-', "_"))))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("flat config always serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layers_apply_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let file = dir.path().join("c.toml");
        std::fs::write(&file, "seed = 3\nhead_lr = 0.01\ntriage_epochs = 5\n").unwrap();
        let mut flags = toml::Table::new();
        flags.insert("seed".into(), toml::Value::Integer(7));
        let cfg = resolve(Some(&file), &["triage_epochs=9".into(), "out=runs/x".into()], flags).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.triage_epochs, 9);
        assert_eq!(cfg.head_lr, 0.01);
        assert_eq!(cfg.out.as_deref(), Some(Path::new("runs/x")));
        assert_eq!(cfg.encoder_lr, 5e-5);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(resolve(None, &["colour=1".into()], toml::Table::new()), Err(CliError::Invalid(_))));
        assert!(matches!(resolve(None, &["mask_rate=1.5".into()], toml::Table::new()), Err(CliError::Invalid(_))));
        assert!(matches!(resolve(None, &["decode=beam".into()], toml::Table::new()), Err(CliError::Invalid(_))));
        assert!(matches!(resolve(None, &["novalue".into()], toml::Table::new()), Err(CliError::Invalid(_))));
    }

    #[test]
    fn snapshot_round_trips() {
        let mut cfg = RunConfig::default();
        cfg.train = Some("data/train.jsonl".into());
        cfg.small_sample_threshold = Some(4);
        let back: RunConfig = toml::from_str(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
