use serde::{Deserialize, Serialize};

use super::family::SubMarkovFamily;
use super::kernel::{pi_from_kernel, row_sums};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Damped iteration `μ ← (1 - λ) μ + λ Π_μ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedPointOptions {
    pub damping: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self { damping: 0.5, tol: 1e-12, max_iter: 100_000 }
    }
}

impl FixedPointOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(Error::invalid(format!("damping must lie in (0, 1], got {}", self.damping)));
        }
        if !(self.tol > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::invalid("max_iter must be at least 1"));
        }
        Ok(())
    }
}

/// Outcome of [`qsd_fixed_point`]. Non-convergence is reported through
/// `converged`, not as an error.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleReport {
    pub qsd: DiscreteMeasure,
    /// `‖μ - Π_μ‖_TV` at the returned measure.
    pub residual_tv: f64,
    /// `λ = μ K_μ 𝟏`: the absorption time is geometric with this one-step
    /// survival probability when started from a QSD.
    pub extinction_rate: f64,
    /// `1 - λ`, the equilibrium killing frequency of the reborn chain.
    pub kill_probability: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Iterates `μ ← (1 - λ) μ + λ Π_μ` from `mu0` until `‖μ - Π_μ‖_TV < tol`.
///
/// Several QSDs may exist; the limit depends on the starting point, so the
/// routine can simply be called again from another `mu0`.
pub fn qsd_fixed_point<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu0: &DiscreteMeasure,
    options: &FixedPointOptions,
) -> Result<OracleReport> {
    options.validate()?;
    if mu0.len() != family.state_count() {
        return Err(Error::invalid("starting measure has the wrong number of states"));
    }
    let lambda = options.damping;
    let mut mu = mu0.clone();
    let mut iterations = 0;
    loop {
        let pi = pi_from_kernel(&family.kernel(&mu), &mu)?;
        let residual = mu.tv_distance(&pi);
        if residual < options.tol || iterations >= options.max_iter {
            let survival = survival_rate(family, &mu);
            return Ok(OracleReport {
                qsd: mu,
                residual_tv: residual,
                extinction_rate: survival,
                kill_probability: 1.0 - survival,
                iterations,
                converged: residual < options.tol,
            });
        }
        let next = mu
            .as_slice()
            .iter()
            .zip(pi.as_slice())
            .map(|(a, b)| (1.0 - lambda) * a + lambda * b)
            .collect();
        mu = DiscreteMeasure::project(next)?;
        iterations += 1;
    }
}

/// `μ K_μ 𝟏`.
pub(crate) fn survival_rate<F: SubMarkovFamily + ?Sized>(family: &F, mu: &DiscreteMeasure) -> f64 {
    let sums = row_sums(&family.kernel(mu));
    mu.as_slice().iter().zip(&sums).map(|(a, s)| a * s).sum()
}

/// Residuals of the QSD characterization at `μ`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct QsdCheck {
    /// `‖μ K_μ - (μ K_μ 𝟏) μ‖_TV`.
    pub residual_tv: f64,
    /// `max_{n ≤ horizon} |μ K_μ^n 𝟏 - (μ K_μ 𝟏)^n|`.
    pub survival_deviation: f64,
}

/// Checks `μ K_μ = (μ K_μ 𝟏) μ` and the geometric survival law
/// `P_μ(τ > n) = (μ K_μ 𝟏)^n` for `n = 1..=horizon`.
pub fn check_qsd_characterization<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu: &DiscreteMeasure,
    horizon: usize,
) -> QsdCheck {
    let k = family.kernel(mu);
    let m = mu.len();
    let step = |v: &[f64]| -> Vec<f64> { (0..m).map(|j| (0..m).map(|i| v[i] * k[(i, j)]).sum()).collect() };

    let first = step(mu.as_slice());
    let lambda: f64 = first.iter().sum();
    let residual_tv = first.iter().zip(mu.as_slice()).map(|(a, b)| (a - lambda * b).abs()).sum();

    let mut v = first;
    let mut survival_deviation: f64 = 0.0;
    for n in 1..=horizon {
        if n > 1 {
            v = step(&v);
        }
        let mass: f64 = v.iter().sum();
        survival_deviation = survival_deviation.max((mass - lambda.powi(n as i32)).abs());
    }
    QsdCheck { residual_tv, survival_deviation }
}
