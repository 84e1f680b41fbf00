//! Dense `f64` tensors, reverse-mode autodiff, parameters, Adam and
//! checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::Checkpoint;
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{sigmoid, Graph, Target, Var};
pub use optim::{Adam, AdamConfig, OptimizerState};
pub use params::{Binding, Param, ParamId, ParamStore};
pub use tensor::{cross_entropy, log_softmax, log_sum_exp, softmax, Tensor};

use rand::SeedableRng;

/// Seeded generator used for every random draw in the crate.
pub type Rng = rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> Rng {
    Rng::seed_from_u64(seed)
}
