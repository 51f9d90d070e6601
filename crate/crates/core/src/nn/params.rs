use std::collections::BTreeMap;

use rand::Rng;

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Param {
    pub(crate) value: Tensor,
    pub(crate) m: Tensor,
    pub(crate) v: Tensor,
}

/// Named parameters plus Adam moment buffers and the optimizer step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    pub(crate) params: BTreeMap<String, Param>,
    pub(crate) step: u64,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        let m = Tensor::zeros(value.shape());
        let v = Tensor::zeros(value.shape());
        self.params.insert(name.into(), Param { value, m, v });
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| Error::ShapeMismatch(format!("missing parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name).map(|p| &mut p.value)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Glorot-uniform weight of shape `[fan_in, fan_out]`.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) {
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-a..=a))
            .collect();
        self.insert(
            name,
            Tensor::matrix(fan_in, fan_out, data).expect("consistent shape"),
        );
    }
}

/// Gradients keyed like a [`ParamStore`]; absent entries are zero.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients {
    map: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.map.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.map.iter().map(|(k, t)| (k.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Mutable slot for `name`, created as zeros of `shape` when missing.
    pub fn slot(&mut self, name: &str, shape: &[usize]) -> Result<&mut Tensor> {
        let t = self
            .map
            .entry(name.to_string())
            .or_insert_with(|| Tensor::zeros(shape));
        if t.shape() != shape {
            return Err(Error::ShapeMismatch(format!(
                "gradient {name}: {:?} vs {shape:?}",
                t.shape()
            )));
        }
        Ok(t)
    }

    pub fn accumulate(&mut self, name: &str, g: &Tensor) -> Result<()> {
        self.slot(name, g.shape())?.add_assign(g)
    }

    pub fn merge(&mut self, other: &Gradients) -> Result<()> {
        for (k, t) in &other.map {
            self.accumulate(k, t)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.map.values_mut() {
            t.scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.map.values().all(Tensor::is_finite)
    }

    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|t| t.data().iter())
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}
