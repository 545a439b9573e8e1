//! Named parameter storage shared by layers, the optimizer and checkpoints.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{shape_str, TensorBase};

/// Stable handle into a [`ParamSet`]. Layers hold ids, never tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry<S: Scalar> {
    pub name: String,
    pub value: TensorBase<S>,
}

/// Flat registry of model tensors in registration order. Trainable entries
/// carry `requires_grad`; the rest are buffers (batch-norm running statistics).
#[derive(Debug, Clone, Default)]
pub struct ParamSet<S: Scalar> {
    entries: Vec<ParamEntry<S>>,
    by_name: HashMap<String, usize>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn new() -> Self {
        Self {
            entries: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: &str, mut value: TensorBase<S>, trainable: bool) -> Result<ParamId> {
        if self.by_name.contains_key(name) {
            return Err(Error::config(format!("duplicate parameter name '{name}'")));
        }
        value.requires_grad = trainable;
        let id = ParamId(self.entries.len());
        self.by_name.insert(name.to_string(), id.0);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value,
        });
        Ok(id)
    }

    /// Kaiming-style fan-in uniform init: U(-1/sqrt(fan_in), 1/sqrt(fan_in)).
    pub fn add_kaiming(
        &mut self,
        name: &str,
        shape: &[usize],
        fan_in: usize,
        rng: &mut impl Rng,
    ) -> Result<ParamId> {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let t = TensorBase::rand_uniform(shape, -bound, bound, rng);
        self.add(name, t, true)
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize], trainable: bool) -> Result<ParamId> {
        self.add(name, TensorBase::zeros(shape), trainable)
    }

    pub fn add_filled(
        &mut self,
        name: &str,
        shape: &[usize],
        v: S,
        trainable: bool,
    ) -> Result<ParamId> {
        self.add(name, TensorBase::filled(shape, v), trainable)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &TensorBase<S> {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut TensorBase<S> {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn lookup(&self, name: &str) -> Option<ParamId> {
        self.by_name.get(name).copied().map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn entries(&self) -> impl Iterator<Item = (ParamId, &ParamEntry<S>)> {
        self.entries.iter().enumerate().map(|(i, e)| (ParamId(i), e))
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.value.requires_grad)
            .map(|(i, _)| ParamId(i))
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Adds `scale * grad` into the entry's grad buffer.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[S], scale: S) -> Result<()> {
        let name = self.entries[id.0].name.clone();
        self.entries[id.0]
            .value
            .accumulate_grad(grad, scale)
            .map_err(|_| {
                Error::shape(format!(
                    "gradient shape mismatch for parameter '{name}' {}",
                    shape_str(self.entries[id.0].value.shape())
                ))
            })
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.value.grad = None;
        }
    }

    /// Overwrites a buffer entry (running statistics). Trainable entries are
    /// updated by the optimizer instead.
    pub fn store_buffer(&mut self, id: ParamId, data: Vec<S>) -> Result<()> {
        let entry = &mut self.entries[id.0];
        if entry.value.requires_grad {
            return Err(Error::config(format!(
                "'{}' is trainable, not a buffer",
                entry.name
            )));
        }
        if data.len() != entry.value.numel() {
            return Err(Error::shape(format!(
                "buffer update length {} does not match '{}' {}",
                data.len(),
                entry.name,
                shape_str(entry.value.shape())
            )));
        }
        entry.value.data_mut().copy_from_slice(&data);
        Ok(())
    }

    pub fn convert<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: e.value.convert::<T>(),
                })
                .collect(),
            by_name: self.by_name.clone(),
        }
    }
}
