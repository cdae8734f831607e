//! Killed Euler–Maruyama kernels for McKean–Vlasov dynamics.
//!
//! One step from `x` under the occupation measure `μ` proposes
//! `y = x + h b(x, μ) + σ(x, μ) Δζ` (or `𝔱(x + h b(x, μ)) + σ(x, μ) Δζ` when a
//! truncation map is set) and kills the walker unless `y` lies in the open
//! domain.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::measure::WeightedEmpiricalMeasure;
use crate::{Error, Result};

pub type Point<const D: usize> = [f64; D];
pub type Occupation<const D: usize> = WeightedEmpiricalMeasure<Point<D>>;

type DriftFn<const D: usize> = dyn Fn(&Point<D>, &Occupation<D>) -> Point<D> + Send + Sync;
type DiffusionFn<const D: usize> = dyn Fn(&Point<D>, &Occupation<D>) -> [[f64; D]; D] + Send + Sync;
type MembershipFn<const D: usize> = dyn Fn(&Point<D>) -> bool + Send + Sync;

/// Open set the walker lives in.
#[derive(Clone)]
pub enum Domain<const D: usize> {
    /// `Π_i (lower_i, upper_i)`; bounds may be infinite.
    Box { lower: Point<D>, upper: Point<D> },
    /// Open Euclidean ball.
    Ball { center: Point<D>, radius: f64 },
    Predicate(Arc<MembershipFn<D>>),
}

impl<const D: usize> fmt::Debug for Domain<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Domain::Box { lower, upper } => f.debug_struct("Box").field("lower", lower).field("upper", upper).finish(),
            Domain::Ball { center, radius } => {
                f.debug_struct("Ball").field("center", center).field("radius", radius).finish()
            }
            Domain::Predicate(_) => f.write_str("Predicate(..)"),
        }
    }
}

impl Domain<1> {
    /// `(a, b)`; either end may be infinite.
    pub fn interval(a: f64, b: f64) -> Result<Self> {
        if a.is_nan() || b.is_nan() || !(a < b) {
            return Err(Error::invalid(format!("interval ({a}, {b}) is empty")));
        }
        Ok(Domain::Box { lower: [a], upper: [b] })
    }
}

impl<const D: usize> Domain<D> {
    pub fn contains(&self, x: &Point<D>) -> bool {
        match self {
            Domain::Box { lower, upper } => (0..D).all(|i| lower[i] < x[i] && x[i] < upper[i]),
            Domain::Ball { center, radius } => {
                let r2: f64 = (0..D).map(|i| (x[i] - center[i]).powi(2)).sum();
                r2 < radius * radius
            }
            Domain::Predicate(p) => p(x),
        }
    }

    /// True when every coordinate is bounded, so `|x|^p` is bounded on the domain.
    pub fn is_bounded(&self) -> bool {
        match self {
            Domain::Box { lower, upper } => lower.iter().chain(upper).all(|v| v.is_finite()),
            Domain::Ball { .. } => true,
            Domain::Predicate(_) => false,
        }
    }
}

/// Law of the per-step noise increment `Δζ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NoiseSpec {
    /// `√h · N(0, 1)` per coordinate.
    Gaussian,
    /// `h^{1/α} · S_α` per coordinate, with `S_α` standard symmetric stable.
    SymmetricStable { alpha: f64 },
}

impl NoiseSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            NoiseSpec::Gaussian => Ok(()),
            NoiseSpec::SymmetricStable { alpha } if alpha > 0.0 && alpha < 2.0 => Ok(()),
            NoiseSpec::SymmetricStable { alpha } => {
                Err(Error::invalid(format!("stable index must lie in (0, 2), got {alpha}")))
            }
        }
    }

    /// One increment over a step of length `h`.
    pub fn increment<R: Rng + ?Sized, const D: usize>(&self, h: f64, rng: &mut R) -> Result<Point<D>> {
        let mut out = [0.0; D];
        match *self {
            NoiseSpec::Gaussian => {
                let s = h.sqrt();
                for o in &mut out {
                    let z: f64 = StandardNormal.sample(rng);
                    *o = s * z;
                }
            }
            NoiseSpec::SymmetricStable { alpha } => {
                let s = h.powf(1.0 / alpha);
                for o in &mut out {
                    *o = s * sample_stable(alpha, rng)?;
                }
            }
        }
        Ok(out)
    }
}

/// Standard symmetric `α`-stable variate (Chambers–Mallows–Stuck).
pub fn sample_stable<R: Rng + ?Sized>(alpha: f64, rng: &mut R) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 2.0) {
        return Err(Error::invalid(format!("stable index must lie in (0, 2), got {alpha}")));
    }
    loop {
        let v = (rng.random::<f64>() - 0.5) * std::f64::consts::PI;
        let w: f64 = Exp1.sample(rng);
        if v.abs() >= FRAC_PI_2 || w == 0.0 {
            continue;
        }
        let x = if alpha == 1.0 {
            v.tan()
        } else {
            (alpha * v).sin() / v.cos().powf(1.0 / alpha) * ((v - alpha * v).cos() / w).powf((1.0 - alpha) / alpha)
        };
        if x.is_finite() {
            return Ok(x);
        }
    }
}

/// Lower clamp `𝔱` with threshold `R`: identity on `[-R, ∞)`, constant
/// `-R-1` on `(-∞, -R-1]`, and a cubic Hermite blend in between with slopes
/// 0 and 1 at the ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncationMap {
    pub r: f64,
}

impl TruncationMap {
    pub fn new(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::invalid(format!("truncation level must be positive, got {r}")));
        }
        Ok(Self { r })
    }

    pub fn apply(&self, x: f64) -> f64 {
        let r = self.r;
        if x >= -r {
            x
        } else if x <= -r - 1.0 {
            -r - 1.0
        } else {
            let s = x + r + 1.0;
            -r - 1.0 + 2.0 * s * s - s * s * s
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        let r = self.r;
        if x >= -r {
            1.0
        } else if x <= -r - 1.0 {
            0.0
        } else {
            let s = x + r + 1.0;
            4.0 * s - 3.0 * s * s
        }
    }
}

/// `σ(x, μ)`.
#[derive(Clone)]
pub enum Diffusion<const D: usize> {
    Identity,
    Scalar(f64),
    Field(Arc<DiffusionFn<D>>),
}

impl<const D: usize> fmt::Debug for Diffusion<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Diffusion::Identity => f.write_str("Identity"),
            Diffusion::Scalar(s) => write!(f, "Scalar({s})"),
            Diffusion::Field(_) => f.write_str("Field(..)"),
        }
    }
}

/// Outcome of one killed step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Transition<P> {
    Alive(P),
    Killed,
}

/// A killed Euler–Maruyama kernel.
#[derive(Clone)]
pub struct EulerModel<const D: usize> {
    drift: Arc<DriftFn<D>>,
    diffusion: Diffusion<D>,
    domain: Domain<D>,
    h: f64,
    noise: NoiseSpec,
    truncation: Option<TruncationMap>,
}

impl<const D: usize> fmt::Debug for EulerModel<D> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EulerModel")
            .field("diffusion", &self.diffusion)
            .field("domain", &self.domain)
            .field("h", &self.h)
            .field("noise", &self.noise)
            .field("truncation", &self.truncation)
            .finish_non_exhaustive()
    }
}

impl<const D: usize> EulerModel<D> {
    pub fn new<F>(drift: F, diffusion: Diffusion<D>, domain: Domain<D>, h: f64, noise: NoiseSpec) -> Result<Self>
    where
        F: Fn(&Point<D>, &Occupation<D>) -> Point<D> + Send + Sync + 'static,
    {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::invalid(format!("step size h must be positive, got {h}")));
        }
        noise.validate()?;
        if let Diffusion::Scalar(s) = diffusion {
            if !s.is_finite() {
                return Err(Error::invalid("diffusion scale must be finite"));
            }
        }
        Ok(Self { drift: Arc::new(drift), diffusion, domain, h, noise, truncation: None })
    }

    /// Switches to the truncated scheme `𝔱(x + h b) + σ Δζ`, with `𝔱` applied coordinatewise.
    pub fn with_truncation(mut self, map: TruncationMap) -> Self {
        self.truncation = Some(map);
        self
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> &Domain<D> {
        &self.domain
    }

    pub fn noise(&self) -> NoiseSpec {
        self.noise
    }

    pub fn truncation(&self) -> Option<TruncationMap> {
        self.truncation
    }

    /// Deterministic part `x + h b(x, μ)`, truncated if configured.
    pub fn drift_step(&self, x: &Point<D>, mu: &Occupation<D>) -> Result<Point<D>> {
        let b = (self.drift)(x, mu);
        if b.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("drift at {x:?} is {b:?}")));
        }
        let mut out = [0.0; D];
        for i in 0..D {
            let m = x[i] + self.h * b[i];
            out[i] = match self.truncation {
                Some(t) => t.apply(m),
                None => m,
            };
        }
        Ok(out)
    }

    /// Candidate point for a given noise increment.
    pub fn propose_with_increment(&self, x: &Point<D>, mu: &Occupation<D>, dz: &Point<D>) -> Result<Point<D>> {
        let mut y = self.drift_step(x, mu)?;
        match &self.diffusion {
            Diffusion::Identity => (0..D).for_each(|i| y[i] += dz[i]),
            Diffusion::Scalar(s) => (0..D).for_each(|i| y[i] += s * dz[i]),
            Diffusion::Field(sigma) => {
                let s = sigma(x, mu);
                if s.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("diffusion at {x:?}")));
                }
                for i in 0..D {
                    y[i] += (0..D).map(|j| s[i][j] * dz[j]).sum::<f64>();
                }
            }
        }
        Ok(y)
    }

    pub fn propose<R: Rng + ?Sized>(&self, x: &Point<D>, mu: &Occupation<D>, rng: &mut R) -> Result<Point<D>> {
        let dz = self.noise.increment::<R, D>(self.h, rng)?;
        self.propose_with_increment(x, mu, &dz)
    }

    /// One draw from `K_μ(x, ·)`: the candidate if it stays in the open domain.
    pub fn kernel_step<R: Rng + ?Sized>(
        &self,
        x: &Point<D>,
        mu: &Occupation<D>,
        rng: &mut R,
    ) -> Result<Transition<Point<D>>> {
        let y = self.propose(x, mu, rng)?;
        Ok(if self.domain.contains(&y) { Transition::Alive(y) } else { Transition::Killed })
    }
}

impl EulerModel<1> {
    /// Brownian motion on `(-1, 1)` with drift `γ · mean(μ)`.
    pub fn benchmark(gamma: f64, h: f64) -> Result<Self> {
        if !gamma.is_finite() {
            return Err(Error::invalid("interaction strength must be finite"));
        }
        Self::new(
            move |_, mu| [gamma * mu.mean()[0]],
            Diffusion::Identity,
            Domain::interval(-1.0, 1.0)?,
            h,
            NoiseSpec::Gaussian,
        )
    }

    /// Ornstein–Uhlenbeck walker on `(0, ∞)` with a bounded pull towards the
    /// occupation mean: `b(x, μ) = -θ (x - m) + c tanh(mean(μ) - x)`.
    pub fn ou_interaction(theta: f64, center: f64, coupling: f64, h: f64) -> Result<Self> {
        if !(theta > 0.0) || !center.is_finite() || !coupling.is_finite() {
            return Err(Error::invalid("OU parameters must be finite with theta > 0"));
        }
        Self::new(
            move |x, mu| [-theta * (x[0] - center) + coupling * (mu.mean()[0] - x[0]).tanh()],
            Diffusion::Identity,
            Domain::interval(0.0, f64::INFINITY)?,
            h,
            NoiseSpec::Gaussian,
        )
    }

    /// `b(x, μ) = -x^p + c ∫ tanh(x - y) μ(dy)` on `(0, ∞)` with `p > 1`.
    ///
    /// The interaction integral costs O(n) per step.
    pub fn superlinear(power: f64, coupling: f64, h: f64, noise: NoiseSpec) -> Result<Self> {
        if !(power > 1.0) || !coupling.is_finite() {
            return Err(Error::invalid("superlinear drift needs power > 1 and finite coupling"));
        }
        Self::new(
            move |x, mu| {
                let pull = mu.integrate(|y| (x[0] - y[0]).tanh()).unwrap_or(0.0);
                [-x[0].abs().powf(power) * x[0].signum() + coupling * pull]
            },
            Diffusion::Identity,
            Domain::interval(0.0, f64::INFINITY)?,
            h,
            noise,
        )
    }
}
