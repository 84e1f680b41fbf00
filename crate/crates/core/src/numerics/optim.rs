use std::collections::BTreeMap;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::numerics::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with one learning rate per parameter group.
///
/// Parameters whose group has no registered learning rate, and frozen
/// parameters, are left untouched.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    group_lr: BTreeMap<String, f64>,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupState {
    pub lr: f64,
    pub params: Vec<String>,
    pub scalars: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct OptimizerState {
    pub optimizer: &'static str,
    pub config: AdamConfig,
    pub step: u64,
    pub groups: BTreeMap<String, GroupState>,
}

impl Adam {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            group_lr: BTreeMap::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn with_group(mut self, group: impl Into<String>, lr: f64) -> Self {
        self.set_group_lr(group, lr);
        self
    }

    pub fn set_group_lr(&mut self, group: impl Into<String>, lr: f64) {
        self.group_lr.insert(group.into(), lr);
    }

    pub fn group_lr(&self, group: &str) -> Option<f64> {
        self.group_lr.get(group).copied()
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<()> {
        if self.m.is_empty() {
            for (_, p) in store.iter() {
                self.m.push(vec![0.0; p.value.len()]);
                self.v.push(vec![0.0; p.value.len()]);
            }
        }
        if self.m.len() != store.len() {
            return Err(Error::invalid("optimizer bound to a different parameter store"));
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, p) in store.iter_mut().enumerate() {
            let Some(&lr) = self.group_lr.get(&p.group) else { continue };
            if p.frozen {
                continue;
            }
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grad = p.grad.data().to_vec();
            for (k, (x, g)) in p.value.data_mut().iter_mut().zip(grad).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g;
                v[k] = beta2 * v[k] + (1.0 - beta2) * g * g;
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                *x -= lr * mh / (vh.sqrt() + eps);
            }
        }
        store.zero_grad();
        Ok(())
    }

    pub fn state(&self, store: &ParamStore) -> OptimizerState {
        let mut groups: BTreeMap<String, GroupState> = self
            .group_lr
            .iter()
            .map(|(g, &lr)| {
                (
                    g.clone(),
                    GroupState {
                        lr,
                        params: Vec::new(),
                        scalars: 0,
                    },
                )
            })
            .collect();
        for (_, p) in store.iter() {
            if let Some(gs) = groups.get_mut(&p.group) {
                if !p.frozen {
                    gs.params.push(p.name.clone());
                    gs.scalars += p.value.len();
                }
            }
        }
        OptimizerState {
            optimizer: "adam",
            config: self.config,
            step: self.step,
            groups,
        }
    }
}
