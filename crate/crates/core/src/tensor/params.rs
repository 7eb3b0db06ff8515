use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::{Gradients, Matrix, Tape, Var};

/// Named bundle of parameter matrices, keyed by dot-separated path.
///
/// Iteration order is the lexicographic order of names, which fixes the
/// order of every reduction over parameters.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Parameters {
    entries: BTreeMap<String, Matrix>,
}

impl Parameters {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts `value` under `name`; fails if the name is already present.
    pub fn insert(&mut self, name: impl Into<String>, value: Matrix) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::Contract(format!("duplicate parameter `{name}`")));
        }
        self.entries.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Matrix> {
        self.entries.get(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Matrix> {
        self.entries.get_mut(name).ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Matrix)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.values().map(Matrix::len).sum()
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), Matrix::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }

    /// Square root of the sum of squares over all entries.
    pub fn global_norm(&self) -> f64 {
        self.entries.values().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    pub fn scale_in_place(&mut self, s: f64) {
        for m in self.entries.values_mut() {
            for v in m.as_mut_slice() {
                *v *= s;
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entries.values().all(Matrix::is_finite)
    }

    /// Records every entry on `tape`: names accepted by `trainable` become
    /// differentiable leaves, the rest constants.
    pub fn bind(&self, tape: &mut Tape, trainable: impl Fn(&str) -> bool) -> BoundParameters {
        let vars = self
            .entries
            .iter()
            .map(|(name, value)| {
                let v = if trainable(name) {
                    tape.leaf(value.clone())
                } else {
                    tape.constant(value.clone())
                };
                (name.clone(), v)
            })
            .collect();
        BoundParameters { vars }
    }
}

/// Parameter names mapped to their handles on one tape.
pub struct BoundParameters {
    vars: BTreeMap<String, Var>,
}

impl BoundParameters {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Gradient for every bound parameter; entries that do not reach the
    /// loss get zeros.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Parameters {
        let entries = self
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = grads.get(v).cloned().unwrap_or_else(|| {
                    let (r, c) = tape.shape(v);
                    Matrix::zeros(r, c)
                });
                (name.clone(), g)
            })
            .collect();
        Parameters { entries }
    }
}
