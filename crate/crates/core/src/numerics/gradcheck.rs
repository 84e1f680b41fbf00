use rand::seq::index::sample;
use rand::SeedableRng;

use crate::error::{Error, Result};
use crate::numerics::graph::{Graph, Var};
use crate::numerics::params::{Binding, ParamId, ParamStore};
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// Entries sampled per parameter tensor (all entries when the tensor is smaller).
    pub per_param: usize,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            per_param: 6,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
    /// Parameter name and flat index of the worst entry.
    pub worst: Option<(String, usize)>,
}

/// Compares backprop gradients with central finite differences on a sample
/// of trainable scalars.
///
/// `loss_fn` builds the loss on a fresh graph from the bound parameters.
/// The relative error of one entry is
/// `|analytic − numeric| / max(1e-6, |analytic| + |numeric|)`.
///
/// The floor keeps entries whose true gradient is zero (key biases, for
/// instance, only shift every score in a row) from being judged on rounding
/// noise alone.
pub fn grad_check<F>(store: &mut ParamStore, mut loss_fn: F, opts: GradCheckOptions) -> Result<GradCheckReport>
where
    F: FnMut(&mut Graph, &Binding) -> Result<Var>,
{
    let mut eval = |store: &ParamStore, with_grad: bool| -> Result<(f64, Option<(Graph, Binding)>)> {
        let mut g = Graph::new();
        let b = store.bind(&mut g);
        let loss = loss_fn(&mut g, &b)?;
        let value = g.scalar(loss);
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "grad_check loss" });
        }
        if with_grad {
            g.backward(loss)?;
            Ok((value, Some((g, b))))
        } else {
            Ok((value, None))
        }
    };

    let (_, bound) = eval(store, true)?;
    let (g, b) = bound.expect("graph");
    let mut rng = Rng::seed_from_u64(opts.seed);
    let mut picks: Vec<(ParamId, usize, f64)> = Vec::new();
    for (id, p) in store.iter() {
        if p.frozen {
            continue;
        }
        let n = p.value.len();
        let analytic = g.grad(b[id]).map(|t| t.data().to_vec()).unwrap_or_else(|| vec![0.0; n]);
        let idx: Vec<usize> = if n <= opts.per_param {
            (0..n).collect()
        } else {
            let mut v = sample(&mut rng, n, opts.per_param).into_vec();
            v.sort_unstable();
            v
        };
        picks.extend(idx.into_iter().map(|i| (id, i, analytic[i])));
    }
    drop(g);

    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        checked: 0,
        worst: None,
    };
    for (id, i, analytic) in picks {
        let orig = store.value(id).data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + opts.eps;
        let plus = eval(store, false);
        store.get_mut(id).value.data_mut()[i] = orig - opts.eps;
        let minus = eval(store, false);
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus?.0 - minus?.0) / (2.0 * opts.eps);
        let err = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        report.checked += 1;
        if report.worst.is_none() || err > report.max_relative_error {
            report.max_relative_error = err;
            report.worst = Some((store.get(id).name.clone(), i));
        }
    }
    Ok(report)
}
