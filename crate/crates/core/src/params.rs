//! Named, ordered learnable tensors with matching gradient buffers.

use indexmap::IndexMap;
use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tape::{Gradients, Tape};
use crate::tensor::{Shape, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// Kaiming-uniform, bound `sqrt(6 / fan_in)` with fan-in taken from the
    /// trailing three extents.
    KaimingUniform,
    Zeros,
    Ones,
}

/// Declared name, shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: IndexMap<String, Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Initializes every spec in order from `rng`.
    pub fn from_specs<R: Rng + ?Sized>(specs: &[ParamSpec], rng: &mut R) -> Self {
        let mut store = ParamStore::new();
        for spec in specs {
            let value = match spec.init {
                Init::Zeros => Tensor::zeros(spec.shape),
                Init::Ones => Tensor::ones(spec.shape),
                Init::KaimingUniform => {
                    let s = spec.shape;
                    let fan_in = (s.c * s.h * s.w).max(1);
                    let bound = (6.0 / fan_in as f64).sqrt();
                    Tensor::uniform(s, -bound, bound, rng)
                }
            };
            store.insert(&spec.name, value);
        }
        store
    }

    /// Adds or replaces a parameter; the gradient buffer is zeroed.
    pub fn insert(&mut self, name: &str, value: Tensor) {
        let grad = Tensor::zeros(value.shape());
        self.entries.insert(name.to_string(), Param { value, grad });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(|p| p.value.numel()).sum()
    }

    pub fn value(&self, name: &str) -> Option<&Tensor> {
        self.entries.get(name).map(|p| &p.value)
    }

    pub fn get(&self, name: &str) -> Option<&Param> {
        self.entries.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.entries.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Param)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn zero_grad(&mut self) {
        for p in self.entries.values_mut() {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Adds the gradients of every parameter recorded on `tape`.
    pub fn accumulate(&mut self, tape: &Tape, grads: &Gradients) -> Result<()> {
        for (name, g) in tape.param_grads(grads) {
            let p = self
                .entries
                .get_mut(name)
                .ok_or_else(|| TensorError::MissingParam(name.to_string()))?;
            for (a, b) in p.grad.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        Ok(())
    }

    /// Checks that this store holds exactly `specs`, by name and shape.
    /// Reports the first offending name.
    pub fn validate(&self, specs: &[ParamSpec]) -> Result<()> {
        for spec in specs {
            let p = self
                .entries
                .get(&spec.name)
                .ok_or_else(|| TensorError::MissingParam(spec.name.clone()))?;
            if p.value.shape() != spec.shape {
                return Err(TensorError::ParamShape {
                    name: spec.name.clone(),
                    expected: spec.shape,
                    actual: p.value.shape(),
                });
            }
        }
        if let Some(extra) = self
            .entries
            .keys()
            .find(|k| !specs.iter().any(|s| &s.name == *k))
        {
            return Err(TensorError::argument(
                "validate",
                format!("unexpected parameter `{extra}`"),
            ));
        }
        Ok(())
    }
}
