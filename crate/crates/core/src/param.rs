//! Named trainable tensors.

use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Parameter<S: Scalar> {
    pub name: String,
    pub tensor: Tensor<S>,
}

impl<S: Scalar> Parameter<S> {
    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }

    /// Frozen parameters are leaves with `requires_grad = false`.
    pub fn is_trainable(&self) -> bool {
        self.tensor.requires_grad()
    }
}

/// Registry of a model's parameters, in registration order.
#[derive(Debug, Clone)]
pub struct ParamStore<S: Scalar> {
    params: Vec<Parameter<S>>,
    names: HashSet<String>,
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self {
            params: Vec::new(),
            names: HashSet::new(),
        }
    }
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers `tensor` under `name` and hands back the shared handle.
    pub fn register(&mut self, name: impl Into<String>, tensor: Tensor<S>) -> Result<Tensor<S>> {
        let name = name.into();
        if !self.names.insert(name.clone()) {
            return Err(Error::Config(format!("duplicate parameter name {name:?}")));
        }
        self.params.push(Parameter {
            name,
            tensor: tensor.clone(),
        });
        Ok(tensor)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<S>> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<&Parameter<S>> {
        self.params.iter().find(|p| p.name == name)
    }

    /// Total element count over all parameters, frozen ones included.
    pub fn count(&self) -> usize {
        self.params.iter().map(Parameter::numel).sum()
    }

    pub fn trainable_count(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.is_trainable())
            .map(Parameter::numel)
            .sum()
    }

    pub fn zero_grad(&self) {
        for p in &self.params {
            p.tensor.zero_grad();
        }
    }

    pub fn as_slice(&self) -> &[Parameter<S>] {
        &self.params
    }
}
