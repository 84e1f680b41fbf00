use std::collections::HashMap;

use rand::Rng as _;

use crate::error::{Error, Result};
use crate::numerics::checkpoint::Checkpoint;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use crate::numerics::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

/// A named trainable tensor. `group` selects the optimizer learning rate.
#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub group: String,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

#[derive(Clone, Debug, Default)]
pub struct ParamStore {
    params: Vec<Param>,
    by_name: HashMap<String, ParamId>,
}

/// Graph nodes for every parameter of a store, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }
}

impl std::ops::Index<ParamId> for Binding {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.vars[id.0]
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, group: impl Into<String>, value: Tensor) -> Result<ParamId> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(Error::invalid(format!("duplicate parameter {name}")));
        }
        let id = ParamId(self.params.len());
        self.by_name.insert(name.clone(), id);
        self.params.push(Param {
            grad: value.zeros_like(),
            name,
            group: group.into(),
            value,
            frozen: false,
        });
        Ok(id)
    }

    /// Xavier-uniform initialized `rows × cols` matrix.
    pub fn add_xavier(&mut self, name: impl Into<String>, group: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.gen_range(-bound..bound)).collect();
        self.add(name, group, Tensor::matrix(rows, cols, data)?)
    }

    pub fn add_zeros(&mut self, name: impl Into<String>, group: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, group, Tensor::zeros(shape))
    }

    pub fn add_ones(&mut self, name: impl Into<String>, group: impl Into<String>, shape: &[usize]) -> Result<ParamId> {
        self.add(name, group, Tensor::full(shape, 1.0))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::shape("set_value", format!("{} {:?} <- {:?}", p.name, p.value.shape(), value.shape())));
        }
        p.value = value;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn set_group_frozen(&mut self, group: &str, frozen: bool) {
        for p in self.params.iter_mut().filter(|p| p.group == group) {
            p.frozen = frozen;
        }
    }

    /// Places every parameter on the graph; frozen parameters become constants.
    pub fn bind(&self, g: &mut Graph) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|p| g.push_leaf(p.value.clone(), !p.frozen))
            .collect();
        Binding { vars }
    }

    /// Adds the graph gradients of bound parameters into the store.
    pub fn accumulate(&mut self, g: &Graph, binding: &Binding) {
        for (p, &v) in self.params.iter_mut().zip(&binding.vars) {
            if let Some(grad) = g.grad(v) {
                p.grad.add_assign(grad);
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|x| *x = 0.0);
        }
    }

    pub fn snapshot(&self) -> Vec<Tensor> {
        self.params.iter().map(|p| p.value.clone()).collect()
    }

    pub fn restore(&mut self, snapshot: Vec<Tensor>) {
        for (p, v) in self.params.iter_mut().zip(snapshot) {
            p.value = v;
        }
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint) {
        for p in &self.params {
            ckpt.insert(p.name.clone(), p.value.clone());
        }
    }

    /// Overwrites every parameter with the same-named tensor of `ckpt`.
    pub fn load_from(&mut self, ckpt: &Checkpoint) -> Result<()> {
        for p in &mut self.params {
            let t = ckpt
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing tensor {}", p.name)))?;
            if t.shape() != p.value.shape() {
                return Err(Error::Checkpoint(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    p.name,
                    t.shape(),
                    p.value.shape()
                )));
            }
            p.value = t.clone();
        }
        Ok(())
    }
}
