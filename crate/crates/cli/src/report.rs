//! The `metrics` command.

use medkit_core::encoder;
use medkit_core::genmetrics::{report, ReportEncoder, ReportOptions};
use medkit_core::{Checkpoint, ParamStore};

use crate::io::{load_vocab_beside, print_json, read_lines, OutDir};
use crate::{CliError, RunConfig};

pub fn metrics(cfg: &RunConfig) -> Result<(), CliError> {
    let generated = read_lines(cfg.need(&cfg.generated, "gen")?)?;
    let reference = read_lines(cfg.need(&cfg.reference, "ref")?)?;
    let opts = ReportOptions {
        tokens: cfg.tokens,
        smoothing: cfg.smoothing,
    };
    let mut store = ParamStore::new();
    let loaded = match &cfg.encoder {
        Some(path) => {
            let vocab = load_vocab_beside(path)?;
            let enc = encoder::from_checkpoint(&Checkpoint::load(path)?, &mut store)?;
            Some((enc, vocab))
        }
        None => None,
    };
    let enc = loaded.as_ref().map(|(encoder, vocab)| ReportEncoder {
        encoder,
        store: &store,
        vocab,
    });
    let r = report(&generated, &reference, enc, &opts)?;
    if let Some(out) = OutDir::optional(cfg)? {
        out.write_json("metrics.json", &r)?;
    }
    print_json(&r);
    Ok(())
}
