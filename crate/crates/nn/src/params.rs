//! Named parameter tensors and their gradients.

use rand::Rng;

use crate::error::{NnError, Result};
use rand_distr::{Distribution, Normal};

/// Index of a parameter inside its [`ParamSet`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Ordered parameters of one network. Order is fixed by construction, so
/// the flat layout is a deterministic function of the model config.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, name: &str, shape: Vec<usize>, data: Vec<f64>) -> ParamId {
        self.params.push(Param {
            name: name.to_string(),
            shape,
            data,
        });
        ParamId(self.params.len() - 1)
    }

    /// Kaiming-normal weights, std = sqrt(2 / fan_in).
    pub fn kaiming(&mut self, rng: &mut impl Rng, name: &str, shape: Vec<usize>, fan_in: usize) -> ParamId {
        let n = shape.iter().product();
        let dist = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let data = (0..n).map(|_| dist.sample(rng)).collect();
        self.push(name, shape, data)
    }

    pub fn constant(&mut self, name: &str, shape: Vec<usize>, value: f64) -> ParamId {
        let n = shape.iter().product();
        self.push(name, shape, vec![value; n])
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.params[id.0].data
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.params[id.0].data
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalars.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.data.len()).sum()
    }

    pub fn zero_grads(&self) -> Grads {
        Grads {
            values: self.params.iter().map(|p| vec![0.0; p.data.len()]).collect(),
        }
    }

    pub fn fill(&mut self, value: f64) {
        for p in &mut self.params {
            p.data.fill(value);
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    /// Copies values from `other`, which must have identical names and shapes.
    pub fn replace_values(&mut self, other: ParamSet) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(NnError::Blob(format!(
                "{} parameter tensors, expected {}",
                other.params.len(),
                self.params.len()
            )));
        }
        for (mine, theirs) in self.params.iter().zip(&other.params) {
            if mine.name != theirs.name || mine.shape != theirs.shape {
                return Err(NnError::Blob(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    theirs.name, theirs.shape, mine.name, mine.shape
                )));
            }
        }
        self.params = other.params;
        Ok(())
    }

    pub(crate) fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }
}

/// Gradients laid out like the [`ParamSet`] they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub values: Vec<Vec<f64>>,
}

impl Grads {
    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for v in self.values.iter_mut().flatten() {
            *v *= s;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().flatten().all(|v| v.is_finite())
    }
}
