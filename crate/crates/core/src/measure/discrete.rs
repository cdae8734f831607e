use serde::{Deserialize, Serialize};

use super::SIMPLEX_TOLERANCE;
use crate::{Error, Result};

/// A probability vector on `{0, .., m-1}`.
///
/// Entries are nonnegative and sum to one within [`SIMPLEX_TOLERANCE`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
}

impl DiscreteMeasure {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::invalid("probability vector must be non-empty"));
        }
        if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
            return Err(Error::invalid(format!("probability entry {w} is not a nonnegative number")));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::invalid(format!("probability vector sums to {total}, expected 1")));
        }
        Ok(Self { weights })
    }

    /// Normalizes a nonnegative vector with positive mass.
    pub fn from_unnormalized(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::invalid("weights must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid("weights must have positive total mass"));
        }
        Ok(Self { weights: weights.into_iter().map(|w| w / total).collect() })
    }

    /// Clips negative entries to zero and renormalizes. Used after numerical
    /// steps that may leave the simplex by rounding.
    pub fn project(mut weights: Vec<f64>) -> Result<Self> {
        for w in weights.iter_mut() {
            if !w.is_finite() {
                return Err(Error::NonFinite("probability vector".into()));
            }
            if *w < 0.0 {
                *w = 0.0;
            }
        }
        Self::from_unnormalized(weights)
    }

    pub fn uniform(m: usize) -> Self {
        assert!(m > 0, "uniform measure on an empty space");
        Self { weights: vec![1.0 / m as f64; m] }
    }

    pub fn dirac(m: usize, state: usize) -> Self {
        assert!(state < m, "state {state} out of range for {m} states");
        let mut weights = vec![0.0; m];
        weights[state] = 1.0;
        Self { weights }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.weights
    }

    pub fn get(&self, state: usize) -> f64 {
        self.weights[state]
    }

    /// `Σ_i μ_i f_i`.
    pub fn integrate(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.len() {
            return Err(Error::invalid(format!(
                "function has {} values for {} states",
                f.len(),
                self.len()
            )));
        }
        let value: f64 = self.weights.iter().zip(f).map(|(w, v)| w * v).sum();
        if value.is_finite() {
            Ok(value)
        } else {
            Err(Error::NonFinite("integrand".into()))
        }
    }

    /// Total variation as `Σ |μ_i - ν_i|`, so two probabilities are at most 2 apart.
    pub fn tv_distance(&self, other: &Self) -> f64 {
        assert_eq!(self.len(), other.len(), "measures live on different spaces");
        tv(&self.weights, &other.weights)
    }
}

/// `Σ |a_i - b_i|` for two equally sized vectors.
pub(crate) fn tv(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

impl TryFrom<Vec<f64>> for DiscreteMeasure {
    type Error = Error;

    fn try_from(value: Vec<f64>) -> Result<Self> {
        Self::new(value)
    }
}

impl From<DiscreteMeasure> for Vec<f64> {
    fn from(value: DiscreteMeasure) -> Self {
        value.weights
    }
}
