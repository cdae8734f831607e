//! The limiting flow `ν̇ = -ν + Π_ν` on a finite simplex.
//!
//! Besides the flow itself, this module integrates its almost-linear form
//! `μ̇ = μ A_μ - (μ A_μ 𝟏) μ` and the time change `τ' = 1 / (μ_τ A_{μ_τ} 𝟏)`
//! that maps one onto the other (`ν_t = μ_{τ(t)}`), so the two can be checked
//! against each other. All integrations use classical fixed-step RK4 with a
//! projection back onto the simplex after each step.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::measure::DiscreteMeasure;
use crate::oracle::{fundamental_kernel, occupation_row, pi_from_kernel, SubMarkovFamily};
use crate::{Error, Result};

/// Largest excursion off the simplex tolerated before projection.
const SIMPLEX_SLACK: f64 = 1e-6;

/// A sampled trajectory of probability vectors.
#[derive(Debug, Clone, Serialize)]
pub struct OdePath {
    pub times: Vec<f64>,
    pub values: Vec<DiscreteMeasure>,
    /// `‖x_t - Π_{x_t}‖_TV` at each sample.
    pub residuals: Vec<f64>,
    /// Time change `τ(t)` at each sample, for paths of the almost-linear form.
    pub tau: Option<Vec<f64>>,
}

impl OdePath {
    pub fn terminal(&self) -> &DiscreteMeasure {
        self.values.last().expect("paths hold at least the initial value")
    }

    pub fn terminal_residual(&self) -> f64 {
        *self.residuals.last().expect("paths hold at least the initial value")
    }
}

/// Clip-and-renormalize used to evaluate `K_μ` at RK stages.
fn to_simplex(v: &[f64]) -> Vec<f64> {
    let clipped: Vec<f64> = v.iter().map(|x| x.max(0.0)).collect();
    let s: f64 = clipped.iter().sum();
    clipped.into_iter().map(|x| x / s).collect()
}

fn axpy(y: &[f64], a: f64, x: &[f64]) -> Vec<f64> {
    y.iter().zip(x).map(|(yi, xi)| yi + a * xi).collect()
}

fn rk4_step<F>(y: &[f64], dt: f64, field: &F) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let k1 = field(y)?;
    let k2 = field(&axpy(y, dt / 2.0, &k1))?;
    let k3 = field(&axpy(y, dt / 2.0, &k2))?;
    let k4 = field(&axpy(y, dt, &k3))?;
    let next = y
        .iter()
        .enumerate()
        .map(|(i, yi)| yi + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    Ok((next, k1))
}

fn settle(raw: Vec<f64>, t: f64) -> Result<DiscreteMeasure> {
    let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
    let sum: f64 = raw.iter().sum();
    if !(min >= -SIMPLEX_SLACK) || !((sum - 1.0).abs() <= SIMPLEX_SLACK) {
        return Err(Error::StepSize(format!(
            "iterate left the simplex at t = {t} (min entry {min:e}, mass {sum}); reduce dt"
        )));
    }
    DiscreteMeasure::project(raw)
}

fn grid(t_end: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::invalid(format!("horizon must be nonnegative, got {t_end}")));
    }
    Ok((t_end / dt).round() as usize)
}

fn check_start<F: SubMarkovFamily + ?Sized>(family: &F, start: &DiscreteMeasure) -> Result<()> {
    if start.len() != family.state_count() {
        return Err(Error::invalid("initial measure has the wrong number of states"));
    }
    Ok(())
}

/// `-ν + Π_ν`.
pub fn qsd_vector_field<F: SubMarkovFamily + ?Sized>(family: &F, nu: &[f64]) -> Result<Vec<f64>> {
    let arg = to_simplex(nu);
    let y = occupation_row(&family.kernel_at(&arg), &arg)?;
    let s: f64 = y.iter().sum();
    Ok(nu.iter().zip(&y).map(|(n, yi)| yi / s - n).collect())
}

/// `μ A_μ - (μ A_μ 𝟏) μ`.
pub fn linearized_vector_field<F: SubMarkovFamily + ?Sized>(family: &F, mu: &[f64]) -> Result<Vec<f64>> {
    let arg = to_simplex(mu);
    let y = occupation_row(&family.kernel_at(&arg), mu)?;
    let s: f64 = y.iter().sum();
    Ok(y.iter().zip(mu).map(|(yi, m)| yi - s * m).collect())
}

/// `μ A_μ 𝟏`, the expected absorption time started from `μ`.
fn absorption_time<F: SubMarkovFamily + ?Sized>(family: &F, mu: &[f64]) -> Result<f64> {
    let arg = to_simplex(mu);
    Ok(occupation_row(&family.kernel_at(&arg), &arg)?.iter().sum())
}

/// Integrates `ν̇ = -ν + Π_ν` from `nu0` over `[0, t_end]` with step `dt`.
pub fn integrate_qsd_ode<F: SubMarkovFamily + ?Sized>(
    family: &F,
    nu0: &DiscreteMeasure,
    t_end: f64,
    dt: f64,
) -> Result<OdePath> {
    check_start(family, nu0)?;
    let steps = grid(t_end, dt)?;
    let field = |v: &[f64]| qsd_vector_field(family, v);
    let mut times = Vec::with_capacity(steps + 1);
    let mut values = Vec::with_capacity(steps + 1);
    let mut residuals = Vec::with_capacity(steps + 1);
    let mut current = nu0.clone();
    for k in 0..steps {
        let (raw, slope) = rk4_step(current.as_slice(), dt, &field)?;
        times.push(k as f64 * dt);
        residuals.push(slope.iter().map(|v| v.abs()).sum());
        values.push(current);
        current = settle(raw, (k + 1) as f64 * dt)?;
    }
    let slope = field(current.as_slice())?;
    times.push(steps as f64 * dt);
    residuals.push(slope.iter().map(|v| v.abs()).sum());
    values.push(current);
    Ok(OdePath { times, values, residuals, tau: None })
}

/// Cubic Hermite interpolation of a path sampled on a uniform grid with known
/// derivatives at the nodes.
struct HermitePath<'a> {
    dt: f64,
    values: &'a [Vec<f64>],
    slopes: &'a [Vec<f64>],
}

impl HermitePath<'_> {
    fn at(&self, s: f64) -> Vec<f64> {
        let last = self.values.len() - 1;
        let pos = (s / self.dt).max(0.0);
        let k = (pos.floor() as usize).min(last.saturating_sub(1));
        if last == 0 {
            return self.values[0].clone();
        }
        let u = (pos - k as f64).clamp(0.0, 1.0);
        let (u2, u3) = (u * u, u * u * u);
        let h00 = 2.0 * u3 - 3.0 * u2 + 1.0;
        let h10 = u3 - 2.0 * u2 + u;
        let h01 = -2.0 * u3 + 3.0 * u2;
        let h11 = u3 - u2;
        (0..self.values[k].len())
            .map(|i| {
                h00 * self.values[k][i]
                    + h10 * self.dt * self.slopes[k][i]
                    + h01 * self.values[k + 1][i]
                    + h11 * self.dt * self.slopes[k + 1][i]
            })
            .collect()
    }
}

/// Linearized path samples with their slopes, kept for interpolation.
struct LinearizedSamples {
    values: Vec<Vec<f64>>,
    slopes: Vec<Vec<f64>>,
}

fn linearized_samples<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu0: &DiscreteMeasure,
    steps: usize,
    dt: f64,
) -> Result<LinearizedSamples> {
    let field = |v: &[f64]| linearized_vector_field(family, v);
    let mut values = Vec::with_capacity(steps + 1);
    let mut slopes = Vec::with_capacity(steps + 1);
    let mut current = mu0.as_slice().to_vec();
    for k in 0..steps {
        let (raw, slope) = rk4_step(&current, dt, &field)?;
        values.push(current);
        slopes.push(slope);
        current = settle(raw, (k + 1) as f64 * dt)?.into_vec();
    }
    slopes.push(field(&current)?);
    values.push(current);
    Ok(LinearizedSamples { values, slopes })
}

/// Integrates `μ̇ = μ A_μ - (μ A_μ 𝟏) μ` and, on the same grid, the time
/// change `τ'(t) = 1 / (μ_{τ(t)} A_{μ_{τ(t)}} 𝟏)` with `τ(0) = 0`.
///
/// `μ_{τ(t)}` between samples is read off a cubic Hermite interpolant built
/// from the stored samples and their exact slopes, so the time change is
/// accurate to the same order as the RK4 path. Since `τ' ≤ 1`, `τ(t) ≤ t`
/// stays inside the integrated range.
pub fn integrate_linearized<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu0: &DiscreteMeasure,
    t_end: f64,
    dt: f64,
) -> Result<OdePath> {
    let (samples, tau) = linearized_with_time_change(family, mu0, t_end, dt)?;
    let mut values = Vec::with_capacity(samples.values.len());
    let mut residuals = Vec::with_capacity(samples.values.len());
    for v in samples.values {
        let mu = DiscreteMeasure::project(v)?;
        let pi = pi_from_kernel(&family.kernel(&mu), &mu)?;
        residuals.push(mu.tv_distance(&pi));
        values.push(mu);
    }
    let times = (0..values.len()).map(|k| k as f64 * dt).collect();
    Ok(OdePath { times, values, residuals, tau: Some(tau) })
}

fn linearized_with_time_change<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu0: &DiscreteMeasure,
    t_end: f64,
    dt: f64,
) -> Result<(LinearizedSamples, Vec<f64>)> {
    check_start(family, mu0)?;
    let steps = grid(t_end, dt)?;
    let samples = linearized_samples(family, mu0, steps, dt)?;
    let interp = HermitePath { dt, values: &samples.values, slopes: &samples.slopes };

    let speed = |tau: f64| -> Result<f64> { Ok(1.0 / absorption_time(family, &interp.at(tau))?) };
    let mut tau = Vec::with_capacity(steps + 1);
    let mut current = 0.0;
    tau.push(current);
    for _ in 0..steps {
        let k1 = speed(current)?;
        let k2 = speed(current + dt / 2.0 * k1)?;
        let k3 = speed(current + dt / 2.0 * k2)?;
        let k4 = speed(current + dt * k3)?;
        current += dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        tau.push(current);
    }
    Ok((samples, tau))
}

/// `max_t ‖ν_t - μ_{τ(t)}‖_TV` between the two independently integrated forms.
pub fn check_time_change_equivalence<F: SubMarkovFamily + ?Sized>(
    family: &F,
    nu0: &DiscreteMeasure,
    t_end: f64,
    dt: f64,
) -> Result<f64> {
    let direct = integrate_qsd_ode(family, nu0, t_end, dt)?;
    let (samples, tau) = linearized_with_time_change(family, nu0, t_end, dt)?;
    let interp = HermitePath { dt, values: &samples.values, slopes: &samples.slopes };
    let mut worst: f64 = 0.0;
    for (nu, t) in direct.values.iter().zip(&tau) {
        let mu = interp.at(*t);
        let gap: f64 = nu.as_slice().iter().zip(&mu).map(|(a, b)| (a - b).abs()).sum();
        worst = worst.max(gap);
    }
    Ok(worst)
}

/// Result of comparing the propagator series with a direct integration.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct PropagatorCheck {
    /// Max entrywise gap between the truncated series and the RK4 solution.
    pub deviation: f64,
    /// Max entry of the last series term kept; large values mean `N` is too small.
    pub last_term: f64,
}

/// For a constant measure path `α_s ≡ μ`, compares `Σ_{k≤N} t^k A_μ^k / k!`
/// with the RK4 solution of `φ̇ = φ A_μ`, `φ_0 = I`.
pub fn propagator_series_check<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu: &DiscreteMeasure,
    t: f64,
    terms: usize,
    dt: f64,
) -> Result<PropagatorCheck> {
    check_start(family, mu)?;
    let a = fundamental_kernel(&family.kernel(mu))?;
    Ok(propagator_check_for(&a, t, terms, dt)?)
}

pub(crate) fn propagator_check_for(a: &DMatrix<f64>, t: f64, terms: usize, dt: f64) -> Result<PropagatorCheck> {
    let m = a.nrows();
    let mut series = DMatrix::identity(m, m);
    let mut term = DMatrix::identity(m, m);
    for k in 1..=terms {
        term = &term * a * (t / k as f64);
        series += &term;
    }
    let last_term = if terms == 0 { 1.0 } else { term.abs().max() };

    let steps = grid(t, dt)?;
    let h = if steps == 0 { 0.0 } else { t / steps as f64 };
    let mut phi = DMatrix::identity(m, m);
    for _ in 0..steps {
        let k1 = &phi * a;
        let k2 = (&phi + &k1 * (h / 2.0)) * a;
        let k3 = (&phi + &k2 * (h / 2.0)) * a;
        let k4 = (&phi + &k3 * h) * a;
        phi += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
    }
    Ok(PropagatorCheck { deviation: (series - phi).abs().max(), last_term })
}
