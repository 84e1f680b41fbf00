//! Pieces shared by the training loops: batching, epoch logs, and
//! divergence handling.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::{Adam, Graph, ParamStore, Rng, Var};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub lr: f64,
    pub seconds: f64,
}

/// CSV with header `epoch,loss,lr`. Wall-clock time is left out so that
/// reruns with the same seed write identical files.
pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from("epoch,loss,lr\n");
    for e in log {
        let _ = writeln!(s, "{},{},{}", e.epoch, e.loss, e.lr);
    }
    s
}

pub fn write_log_csv(path: &Path, log: &[EpochLog]) -> Result<()> {
    fs::write(path, log_to_csv(log)).map_err(|e| Error::io(path, e))
}

/// Shuffled mini-batches of `0..n`.
pub fn batches(n: usize, batch_size: usize, rng: &mut Rng) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(rng);
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Runs `epochs` passes of mini-batch Adam.
///
/// `build` places the summed loss of one batch on a fresh graph and returns
/// it with the number of terms it averages over (`None` skips the batch).
/// A non-finite loss restores the parameters saved at the start of the
/// epoch and returns [`Error::Diverged`].
pub(crate) fn run_epochs<F>(
    store: &mut ParamStore,
    adam: &mut Adam,
    n: usize,
    epochs: usize,
    batch_size: usize,
    report_lr: f64,
    rng: &mut Rng,
    mut build: F,
) -> Result<Vec<EpochLog>>
where
    F: FnMut(&mut Graph, &crate::numerics::Binding, &[usize], &mut Rng) -> Result<Option<(Var, usize)>>,
{
    let mut log = Vec::with_capacity(epochs);
    for epoch in 1..=epochs {
        let start = Instant::now();
        let snapshot = store.snapshot();
        let mut total = 0.0;
        let mut terms = 0usize;
        for batch in batches(n, batch_size, rng) {
            let mut g = Graph::new();
            let b = store.bind(&mut g);
            let built = match build(&mut g, &b, &batch, rng) {
                Ok(v) => v,
                Err(Error::NonFinite { .. }) => {
                    store.restore(snapshot);
                    store.zero_grad();
                    return Err(Error::Diverged { epoch });
                }
                Err(e) => return Err(e),
            };
            let Some((sum, count)) = built else { continue };
            let value = g.scalar(sum);
            let loss = g.scale(sum, 1.0 / count as f64);
            let loss = match loss {
                Ok(l) if value.is_finite() => l,
                _ => {
                    store.restore(snapshot);
                    store.zero_grad();
                    return Err(Error::Diverged { epoch });
                }
            };
            g.backward(loss)?;
            store.accumulate(&g, &b);
            adam.step(store)?;
            if store.iter().any(|(_, p)| !p.value.is_finite()) {
                store.restore(snapshot);
                return Err(Error::Diverged { epoch });
            }
            total += value;
            terms += count;
        }
        let loss = if terms == 0 { f64::NAN } else { total / terms as f64 };
        log::info!("epoch {epoch}: loss {loss:.6} ({:.2}s)", start.elapsed().as_secs_f64());
        log.push(EpochLog {
            epoch,
            loss,
            lr: report_lr,
            seconds: start.elapsed().as_secs_f64(),
        });
    }
    Ok(log)
}
