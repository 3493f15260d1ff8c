//! Named parameter and buffer storage. Layers hold ids; the stores own the
//! tensors, so optimizers, checkpoints and tape binding all enumerate the
//! same flat lists.

use rand::Rng;
use tapegrad::{Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BufId(pub usize);

/// Trainable parameters.
#[derive(Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.values.push(value.with_requires_grad(true));
        ParamId(self.values.len() - 1)
    }

    /// Symmetric uniform fan-in init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..bound));
        self.add(name, t)
    }

    pub fn add_scaled_uniform(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        bound: f64,
        rng: &mut impl Rng,
    ) -> ParamId {
        let t = Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-bound..bound));
        self.add(name, t)
    }

    pub fn add_const(&mut self, name: impl Into<String>, shape: &[usize], value: f64) -> ParamId {
        self.add(name, Tensor::full(shape.to_vec(), value))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn total_params(&self) -> u64 {
        self.values.iter().map(|t| t.numel() as u64).sum()
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("unknown parameter '{name}'")))?;
        if self.values[idx].shape() != value.shape() {
            return Err(Error::data(format!(
                "parameter '{name}' shape {:?} != checkpoint shape {:?}",
                self.values[idx].shape(),
                value.shape()
            )));
        }
        self.values[idx] = value.with_requires_grad(true);
        Ok(())
    }
}

/// Non-trainable state (running statistics).
#[derive(Default)]
pub struct BufferStore {
    names: Vec<String>,
    values: Vec<Tensor>,
}

impl BufferStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> BufId {
        self.names.push(name.into());
        self.values.push(value);
        BufId(self.values.len() - 1)
    }

    pub fn get(&self, id: BufId) -> &Tensor {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: BufId) -> &mut Tensor {
        &mut self.values[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.values.iter())
    }

    pub fn set_by_name(&mut self, name: &str, value: Tensor) -> Result<()> {
        let idx = self
            .names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::data(format!("unknown buffer '{name}'")))?;
        self.values[idx] = value;
        Ok(())
    }
}

/// Per-tape binding of every parameter as a leaf.
pub struct Bindings {
    vars: Vec<Var>,
}

impl Bindings {
    pub fn bind_all(store: &ParamStore, tape: &mut Tape) -> Self {
        let vars = store.values.iter().map(|t| tape.leaf(t)).collect();
        Bindings { vars }
    }

    /// Insert parameters as constants: no ops are recorded downstream,
    /// which keeps pure-inference tapes small.
    pub fn bind_frozen(store: &ParamStore, tape: &mut Tape) -> Self {
        let vars = store
            .values
            .iter()
            .map(|t| {
                let frozen = t.clone().with_requires_grad(false);
                tape.leaf(&frozen)
            })
            .collect();
        Bindings { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, Var)> + '_ {
        self.vars.iter().enumerate().map(|(i, &v)| (ParamId(i), v))
    }
}
