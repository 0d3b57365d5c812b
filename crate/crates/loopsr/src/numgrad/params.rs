//! Named parameter collections.

use std::collections::HashMap;

use super::{NumError, Tensor};
use crate::rng::Rng;

/// Ordered collection of named tensors.
///
/// Iteration order is insertion order, which is fixed by construction code
/// and therefore identical across runs. Adam state, gradient maps and the
/// checkpoint format all align to this order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<(), NumError> {
        if self.index.contains_key(name) {
            return Err(NumError::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.to_string(), self.entries.len());
        self.entries.push((name.to_string(), tensor));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = *self.index.get(name)?;
        Some(&mut self.entries[i].1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.entries.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    /// Total number of scalar coordinates.
    pub fn coordinate_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.numel()).sum()
    }

    /// Xavier-uniform weight [d_in x d_out] plus zero bias [d_out],
    /// registered as `<name>.w` / `<name>.b`.
    pub fn insert_affine(
        &mut self,
        name: &str,
        d_in: usize,
        d_out: usize,
        rng: &mut Rng,
    ) -> Result<(), NumError> {
        let bound = (6.0 / (d_in + d_out) as f64).sqrt();
        let w: Vec<f64> = (0..d_in * d_out)
            .map(|_| rng.uniform_in(-bound, bound))
            .collect();
        self.insert(&format!("{name}.w"), Tensor::new(vec![d_in, d_out], w)?)?;
        self.insert(&format!("{name}.b"), Tensor::zeros(&[d_out]))
    }

    /// Interpolate every coordinate toward `other` (used only in tests).
    pub fn assert_same_layout(&self, other: &ParamSet) -> Result<(), NumError> {
        if self.len() != other.len() {
            return Err(NumError::BadShape(format!(
                "param count {} vs {}",
                self.len(),
                other.len()
            )));
        }
        for ((na, ta), (nb, tb)) in self.entries.iter().zip(other.entries.iter()) {
            if na != nb || ta.shape() != tb.shape() {
                return Err(NumError::BadShape(format!(
                    "param {na} {:?} vs {nb} {:?}",
                    ta.shape(),
                    tb.shape()
                )));
            }
        }
        Ok(())
    }
}

/// Per-parameter gradients, aligned by name.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    entries: Vec<(String, Tensor)>,
    index: HashMap<String, usize>,
}

impl Gradients {
    pub fn insert(&mut self, name: String, tensor: Tensor) {
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push((name, tensor));
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.entries[i].1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Sum another gradient map into this one (names must match or be new).
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, grad) in other.iter() {
            match self.index.get(name) {
                Some(&i) => {
                    let dst = self.entries[i].1.values_mut();
                    for (d, s) in dst.iter_mut().zip(grad.values()) {
                        *d += s;
                    }
                }
                None => self.insert(name.to_string(), grad.clone()),
            }
        }
    }

    /// Scale every gradient coordinate in place.
    pub fn scale(&mut self, factor: f64) {
        for (_, t) in self.entries.iter_mut() {
            for v in t.values_mut() {
                *v *= factor;
            }
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.entries
            .iter()
            .flat_map(|(_, t)| t.values().iter())
            .fold(0.0f64, |acc, v| acc.max(v.abs()))
    }
}
