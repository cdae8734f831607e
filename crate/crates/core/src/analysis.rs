//! Post-processing: densities on grids, kernel density estimates, distances,
//! and the closed-form QSD family of Brownian motion on `(-1, 1)` driven by
//! its own conditional mean.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::measure::{DiscreteMeasure, Particle, WeightedEmpiricalMeasure};
use crate::{Error, Result};

/// Equally spaced points `lower = x_0 < … < x_{n-1} = upper`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub lower: f64,
    pub upper: f64,
    pub points: usize,
}

impl Grid {
    pub fn new(lower: f64, upper: f64, points: usize) -> Result<Self> {
        let g = Self { lower, upper, points };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() || self.points < 2 {
            return Err(Error::invalid("grid needs finite lower < upper and at least two points"));
        }
        Ok(())
    }

    pub fn step(&self) -> f64 {
        (self.upper - self.lower) / (self.points - 1) as f64
    }

    pub fn x(&self, k: usize) -> f64 {
        if k + 1 == self.points {
            self.upper
        } else {
            self.lower + k as f64 * self.step()
        }
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.points).map(|k| self.x(k)).collect()
    }
}

/// Nonnegative function values on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityOnGrid {
    pub grid: Grid,
    pub values: Vec<f64>,
}

fn trapezoid(values: &[f64], dx: f64) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    dx * (values.iter().sum::<f64>() - 0.5 * (values[0] + values[n - 1]))
}

/// Cumulative trapezoid integral, starting at 0.
fn cumulative(values: &[f64], dx: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len());
    let mut acc = 0.0;
    out.push(0.0);
    for w in values.windows(2) {
        acc += 0.5 * dx * (w[0] + w[1]);
        out.push(acc);
    }
    out
}

impl DensityOnGrid {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        grid.validate()?;
        if values.len() != grid.points {
            return Err(Error::invalid("density values do not match the grid"));
        }
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid("density values must be finite and nonnegative"));
        }
        Ok(Self { grid, values })
    }

    pub fn integral(&self) -> f64 {
        trapezoid(&self.values, self.grid.step())
    }

    /// Rescales so the trapezoid integral is one.
    pub fn normalize(mut self) -> Result<Self> {
        let mass = self.integral();
        if !(mass > 0.0) {
            return Err(Error::invalid("cannot normalize a density with zero mass"));
        }
        self.values.iter_mut().for_each(|v| *v /= mass);
        Ok(self)
    }

    pub fn cdf(&self) -> Vec<f64> {
        cumulative(&self.values, self.grid.step())
    }
}

/// Kernel bandwidth choice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Bandwidth {
    /// `1.06 σ̂ n_eff^{-1/5}` with `n_eff = (Σ w)² / Σ w²`.
    Silverman,
    Fixed(f64),
}

/// Silverman's rule for a weighted sample of the scalar coordinate.
pub fn silverman_bandwidth<P: Particle>(mu: &WeightedEmpiricalMeasure<P>) -> Result<f64> {
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let mut mean = 0.0;
    let mut sq = 0.0;
    let mut w2 = 0.0;
    for (x, p) in mu.iter() {
        let c = x.coordinate();
        mean += p * c;
        sq += p * c * c;
        w2 += p * p;
    }
    let sd = (sq - mean * mean).max(0.0).sqrt();
    let n_eff = 1.0 / w2;
    let bw = 1.06 * sd * n_eff.powf(-0.2);
    if !(bw > 0.0) {
        return Err(Error::invalid("sample has zero spread; pass an explicit bandwidth"));
    }
    Ok(bw)
}

/// Samples above this size are linearly binned before smoothing.
const BINNED_KDE_MIN: usize = 20_000;
/// Mesh cells per bandwidth in the binned estimator.
const BINS_PER_BANDWIDTH: f64 = 20.0;

/// Gaussian kernel density estimate of the scalar coordinate of `mu`,
/// renormalized on the grid window.
///
/// Large samples are first linearly binned on a mesh aligned with the grid
/// and at most `bw / 20` wide, which keeps the cost linear in the sample size.
pub fn kde<P: Particle>(mu: &WeightedEmpiricalMeasure<P>, bandwidth: Bandwidth, grid: Grid) -> Result<DensityOnGrid> {
    grid.validate()?;
    if mu.is_empty() {
        return Err(Error::EmptyMeasure);
    }
    let bw = match bandwidth {
        Bandwidth::Fixed(b) if b > 0.0 && b.is_finite() => b,
        Bandwidth::Fixed(b) => return Err(Error::invalid(format!("bandwidth must be positive, got {b}"))),
        Bandwidth::Silverman => silverman_bandwidth(mu)?,
    };
    let values = if mu.len() >= BINNED_KDE_MIN { binned_kde(mu, bw, grid) } else { direct_kde(mu, bw, grid) };
    DensityOnGrid::new(grid, values)?.normalize()
}

fn direct_kde<P: Particle>(mu: &WeightedEmpiricalMeasure<P>, bw: f64, grid: Grid) -> Vec<f64> {
    let dx = grid.step();
    let reach = 10.0 * bw;
    let norm = 1.0 / (bw * (2.0 * PI).sqrt());
    let mut values = vec![0.0; grid.points];
    for (x, p) in mu.iter() {
        let c = x.coordinate();
        let lo = (((c - reach - grid.lower) / dx).floor().max(0.0)) as usize;
        let hi = ((((c + reach - grid.lower) / dx).ceil()).min((grid.points - 1) as f64)).max(-1.0);
        if hi < 0.0 || lo >= grid.points {
            continue;
        }
        for (k, v) in values.iter_mut().enumerate().take(hi as usize + 1).skip(lo) {
            let z = (grid.x(k) - c) / bw;
            *v += p * norm * (-0.5 * z * z).exp();
        }
    }
    values
}

fn binned_kde<P: Particle>(mu: &WeightedEmpiricalMeasure<P>, bw: f64, grid: Grid) -> Vec<f64> {
    let dx = grid.step();
    let refine = (dx * BINS_PER_BANDWIDTH / bw).ceil().max(1.0) as usize;
    let delta = dx / refine as f64;
    let halo = (10.0 * bw / delta).ceil() as usize;
    let cells = (grid.points - 1) * refine + 1 + 2 * halo;
    let origin = grid.lower - halo as f64 * delta;
    let mut mass = vec![0.0; cells];
    for (x, p) in mu.iter() {
        let t = (x.coordinate() - origin) / delta;
        if !(t >= 0.0 && t < (cells - 1) as f64) {
            continue;
        }
        let j = t.floor() as usize;
        let frac = t - j as f64;
        mass[j] += p * (1.0 - frac);
        mass[j + 1] += p * frac;
    }
    let norm = 1.0 / (bw * (2.0 * PI).sqrt());
    let weights: Vec<f64> = (0..=halo)
        .map(|d| {
            let z = d as f64 * delta / bw;
            norm * (-0.5 * z * z).exp()
        })
        .collect();
    (0..grid.points)
        .map(|k| {
            let centre = halo + k * refine;
            let mut v = mass[centre] * weights[0];
            for d in 1..=halo {
                v += (mass[centre - d] + mass[centre + d]) * weights[d];
            }
            v
        })
        .collect()
}

/// Composite Simpson rule with `intervals` (rounded up to even) subintervals.
pub fn simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, intervals: usize) -> f64 {
    let n = intervals.max(2) + intervals % 2;
    let h = (b - a) / n as f64;
    let mut acc = f(a) + f(b);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + k as f64 * h);
    }
    acc * h / 3.0
}

const SIMPSON_INTERVALS: usize = 20_000;

fn unnormalized_pi(c: f64, x: f64) -> f64 {
    (c * x).exp() * (FRAC_PI_2 * x).cos()
}

/// `∫_{-1}^{1} e^{cx} cos(πx/2) dx` by composite Simpson.
pub fn pi_normalizer(c: f64) -> f64 {
    simpson(|x| unnormalized_pi(c, x), -1.0, 1.0, SIMPSON_INTERVALS)
}

/// `π_c(x) ∝ e^{cx} cos(πx/2)` on `[-1, 1]`, zero outside.
pub fn pi_b_value(c: f64, x: f64, normalizer: f64) -> f64 {
    if x.abs() > 1.0 {
        0.0
    } else {
        (unnormalized_pi(c, x) / normalizer).max(0.0)
    }
}

/// `π_b ∝ e^{bx} cos(πx/2)` sampled on a grid inside `[-1, 1]`.
pub fn pi_b_density(b: f64, grid: Grid) -> Result<DensityOnGrid> {
    grid.validate()?;
    if grid.lower < -1.0 || grid.upper > 1.0 {
        return Err(Error::invalid("grid must lie within [-1, 1]"));
    }
    let z = pi_normalizer(b);
    DensityOnGrid::new(grid, grid.xs().into_iter().map(|x| pi_b_value(b, x, z)).collect())
}

/// Mean of `π_c`: `tanh c - 8c / (4c² + π²)`.
pub fn pi_b_mean(c: f64) -> f64 {
    c.tanh() - 8.0 * c / (4.0 * c * c + PI * PI)
}

/// `G(b) = tanh(γb) - 8γb / (4γ²b² + π²) - b`; QSDs correspond to its roots.
pub fn fixed_point_map(gamma: f64, b: f64) -> f64 {
    pi_b_mean(gamma * b) - b
}

/// The QSD attached to a root `b` of [`fixed_point_map`].
///
/// `b` is the mean of the QSD, and the drift it induces is `γ b`, so the
/// density is `π_{γb}`.
pub fn benchmark_qsd_density(gamma: f64, b: f64, grid: Grid) -> Result<DensityOnGrid> {
    pi_b_density(gamma * b, grid)
}

/// `π² / (π² + 8)`, the threshold quoted for the onset of three fixed points.
pub fn stated_threshold() -> f64 {
    PI * PI / (PI * PI + 8.0)
}

/// `π² / (π² - 8)`: the slope of `b ↦ G(b) + b` at zero is `γ (1 - 8/π²)`,
/// so nonzero roots appear once it exceeds one.
pub fn slope_threshold() -> f64 {
    PI * PI / (PI * PI - 8.0)
}

const ROOT_BRACKET: f64 = 50.0;
const ROOT_CELLS: usize = 100_000;

/// All roots of [`fixed_point_map`] in `[-50, 50]`, sorted. Always contains 0.
pub fn b_fixed_points(gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let g = |b: f64| fixed_point_map(gamma, b);
    let dx = ROOT_BRACKET / ROOT_CELLS as f64;
    let mut positive = Vec::new();
    let mut left = dx;
    let mut g_left = g(left);
    // The first cell (0, dx] is judged by the sign just right of zero.
    for k in 2..=ROOT_CELLS {
        let right = k as f64 * dx;
        let g_right = g(right);
        if g_left == 0.0 {
            positive.push(left);
        } else if g_left.signum() != g_right.signum() && g_right != 0.0 {
            positive.push(bisect(&g, left, right));
        }
        left = right;
        g_left = g_right;
    }
    if g_left == 0.0 {
        positive.push(left);
    }
    let mut roots: Vec<f64> = positive.iter().map(|r| -r).collect();
    roots.push(0.0);
    roots.extend(&positive);
    roots.sort_by(f64::total_cmp);
    Ok(roots)
}

fn bisect<F: Fn(f64) -> f64>(g: &F, mut a: f64, mut b: f64) -> f64 {
    let ga = g(a);
    while b - a > 1e-12 {
        let mid = 0.5 * (a + b);
        let gm = g(mid);
        if gm == 0.0 {
            return mid;
        }
        if gm.signum() == ga.signum() {
            a = mid;
        } else {
            b = mid;
        }
    }
    0.5 * (a + b)
}

/// Draws from `π_0` by inverting its CDF `(1 + sin(πx/2)) / 2`.
pub fn pi_zero_quantile(u: f64) -> f64 {
    (2.0 * u - 1.0).clamp(-1.0, 1.0).asin() / FRAC_PI_2
}

/// Distances between two laws of the same kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Distances {
    pub l1: f64,
    pub tv: f64,
    pub w1: f64,
    pub ks: f64,
}

/// Distances between densities on the same grid.
pub fn density_distances(p: &DensityOnGrid, q: &DensityOnGrid) -> Result<Distances> {
    if p.grid != q.grid {
        return Err(Error::invalid("densities live on different grids"));
    }
    let dx = p.grid.step();
    let gap: Vec<f64> = p.values.iter().zip(&q.values).map(|(a, b)| (a - b).abs()).collect();
    let l1 = trapezoid(&gap, dx);
    let cdf_gap: Vec<f64> = p.cdf().iter().zip(q.cdf()).map(|(a, b)| (a - b).abs()).collect();
    Ok(Distances {
        l1,
        tv: l1,
        w1: trapezoid(&cdf_gap, dx),
        ks: cdf_gap.iter().copied().fold(0.0, f64::max),
    })
}

/// Distances between measures on `{0, …, m-1}`, with states at unit spacing for `w1`.
pub fn discrete_distances(p: &DiscreteMeasure, q: &DiscreteMeasure) -> Result<Distances> {
    if p.len() != q.len() {
        return Err(Error::invalid("measures live on different state spaces"));
    }
    let tv = p.tv_distance(q);
    let mut fp = 0.0;
    let mut fq = 0.0;
    let mut w1 = 0.0;
    let mut ks: f64 = 0.0;
    for (a, b) in p.as_slice().iter().zip(q.as_slice()).take(p.len().saturating_sub(1)) {
        fp += a;
        fq += b;
        w1 += (fp - fq).abs();
        ks = ks.max((fp - fq).abs());
    }
    Ok(Distances { l1: tv, tv, w1, ks })
}
