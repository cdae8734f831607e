use serde::{Deserialize, Serialize};

use super::empirical::{Particle, WeightedEmpiricalMeasure};
use crate::{Error, Result};

/// Weight sequence `η_n` of the occupation measure, with `H_n = Σ_{k≤n} η_k`
/// and step `γ_n = η_n / H_n`.
///
/// Every variant satisfies `H_n → ∞`, `γ_n = o(1/log n)` and `Σ γ_n² < ∞`
/// once [`validate`](Self::validate) succeeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StepSchedule {
    /// `η_n = 1`, hence `γ_n = 1/n`.
    ConstantWeight,
    /// `η_n = n^α` with `α > -1`; `H_n ~ n^{1+α} / (1 + α)` and `γ_n ~ (1 + α) / n`.
    Polynomial { alpha: f64 },
    /// `η_n = exp(n^α)` with `0 < α < 1/2`. Weights are handled in log space.
    StretchedExponential { alpha: f64 },
}

impl StepSchedule {
    pub fn validate(&self) -> Result<()> {
        match *self {
            StepSchedule::ConstantWeight => Ok(()),
            StepSchedule::Polynomial { alpha } if alpha.is_finite() && alpha > -1.0 => Ok(()),
            StepSchedule::Polynomial { alpha } => Err(Error::invalid(format!(
                "polynomial weights n^alpha need alpha > -1 so that H_n diverges, got {alpha}"
            ))),
            StepSchedule::StretchedExponential { alpha } if alpha > 0.0 && alpha < 0.5 => Ok(()),
            StepSchedule::StretchedExponential { alpha } => Err(Error::invalid(format!(
                "exp(n^alpha) weights need 0 < alpha < 1/2 for gamma_n = o(1/log n), got {alpha}"
            ))),
        }
    }

    /// `ln η_n`.
    pub fn ln_eta(&self, n: u64) -> f64 {
        let n = n as f64;
        match *self {
            StepSchedule::ConstantWeight => 0.0,
            StepSchedule::Polynomial { alpha } => alpha * n.ln(),
            StepSchedule::StretchedExponential { alpha } => n.powf(alpha),
        }
    }

    /// `η_n` in linear scale; may be infinite for stretched-exponential weights.
    pub fn eta(&self, n: u64) -> f64 {
        match *self {
            StepSchedule::ConstantWeight => 1.0,
            StepSchedule::Polynomial { alpha } => (n as f64).powf(alpha),
            StepSchedule::StretchedExponential { .. } => self.ln_eta(n).exp(),
        }
    }

    fn log_scale_weights(&self) -> bool {
        matches!(self, StepSchedule::StretchedExponential { .. })
    }

    /// `γ_n = η_n / H_n`, computing `H_n` by direct summation.
    pub fn gamma(&self, n: u64) -> Result<f64> {
        if n == 0 {
            return Err(Error::invalid("gamma_n is defined for n >= 1"));
        }
        self.validate()?;
        match *self {
            StepSchedule::ConstantWeight => Ok(1.0 / n as f64),
            StepSchedule::Polynomial { .. } => {
                let mut sum = 0.0;
                let mut comp = 0.0;
                for k in 1..=n {
                    let v = self.eta(k);
                    let t = sum + v;
                    comp += if sum >= v { (sum - t) + v } else { (v - t) + sum };
                    sum = t;
                }
                Ok(self.eta(n) / (sum + comp))
            }
            StepSchedule::StretchedExponential { .. } => {
                let top = self.ln_eta(n);
                let scaled: f64 = (1..=n).map(|k| (self.ln_eta(k) - top).exp()).sum();
                Ok(1.0 / scaled)
            }
        }
    }

    /// Appends `x` to `measure` with weight `η_n` and returns `γ_n`.
    pub fn append<P: Particle>(&self, measure: &mut WeightedEmpiricalMeasure<P>, x: P, n: u64) -> Result<f64> {
        if self.log_scale_weights() {
            measure.push_log(x, self.ln_eta(n))
        } else {
            measure.push(x, self.eta(n))
        }
    }
}
