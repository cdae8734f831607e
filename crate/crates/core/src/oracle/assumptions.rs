use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use super::family::SubMarkovFamily;
use super::kernel::row_sums;
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Smallest `ℓ` with `sup_{μ, i} K_μ^ℓ 𝟏(i) = ρ < 1` over the checked grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct H0Certificate {
    pub ell: usize,
    pub rho: f64,
}

impl H0Certificate {
    /// Bound `ℓ / (1 - ρ)` on the expected absorption time, hence on `A_μ 𝟏`.
    pub fn absorption_bound(&self) -> f64 {
        self.ell as f64 / (1.0 - self.rho)
    }
}

/// `K_μ^ℓ ≥ ε Ψ` uniformly over the checked grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Minorization {
    pub ell: usize,
    pub epsilon: f64,
    pub psi: DiscreteMeasure,
}

/// `c1 Ψ(j) ≤ K_μ(i, j) ≤ c2 Ψ(j)` uniformly over the checked grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerUpper {
    pub c1: f64,
    pub c2: f64,
}

fn require_grid(grid: &[DiscreteMeasure], m: usize) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::invalid("measure grid is empty"));
    }
    if grid.iter().any(|mu| mu.len() != m) {
        return Err(Error::invalid("grid measure has the wrong number of states"));
    }
    Ok(())
}

/// Vertices `δ_i`, the uniform law and `random` Dirichlet(1, .., 1) draws.
pub fn measure_grid<R: Rng + ?Sized>(m: usize, random: usize, rng: &mut R) -> Vec<DiscreteMeasure> {
    let mut grid: Vec<_> = (0..m).map(|i| DiscreteMeasure::dirac(m, i)).collect();
    grid.push(DiscreteMeasure::uniform(m));
    for _ in 0..random {
        let draw: Vec<f64> = (0..m).map(|_| Exp1.sample(rng)).collect();
        grid.push(DiscreteMeasure::from_unnormalized(draw).expect("exponential draws are positive"));
    }
    grid
}

/// Finds the smallest `ℓ ≤ l_max` such that every row sum of `K_μ^ℓ` is
/// strictly below one for every `μ` of the grid.
pub fn check_h0<F: SubMarkovFamily + ?Sized>(family: &F, grid: &[DiscreteMeasure], l_max: usize) -> Result<H0Certificate> {
    let m = family.state_count();
    require_grid(grid, m)?;
    if l_max == 0 {
        return Err(Error::invalid("l_max must be at least 1"));
    }
    let kernels: Vec<DMatrix<f64>> = grid.iter().map(|mu| family.kernel(mu)).collect();
    let mut survival: Vec<Vec<f64>> = vec![vec![1.0; m]; kernels.len()];
    let mut worst = 1.0;
    for ell in 1..=l_max {
        worst = 0.0f64;
        for (k, v) in kernels.iter().zip(survival.iter_mut()) {
            let next: Vec<f64> = (0..m).map(|i| (0..m).map(|j| k[(i, j)] * v[j]).sum()).collect();
            worst = next.iter().copied().fold(worst, f64::max);
            *v = next;
        }
        if worst < 1.0 {
            return Ok(H0Certificate { ell, rho: worst });
        }
    }
    Err(Error::Assumption {
        name: "H0",
        detail: format!("some row of K^l still has mass {worst} at l = {l_max}"),
    })
}

/// Computes `Ψ ∝ min_{μ, i} K_μ^ℓ(i, ·)` and `ε = Σ_j min_{μ, i} K_μ^ℓ(i, j)`.
pub fn check_minorization<F: SubMarkovFamily + ?Sized>(
    family: &F,
    grid: &[DiscreteMeasure],
    ell: usize,
) -> Result<Minorization> {
    let m = family.state_count();
    require_grid(grid, m)?;
    if ell == 0 {
        return Err(Error::invalid("ell must be at least 1"));
    }
    let mut floor = vec![f64::INFINITY; m];
    for mu in grid {
        let k = family.kernel(mu);
        let mut power = k.clone();
        for _ in 1..ell {
            power = &power * &k;
        }
        for j in 0..m {
            for i in 0..m {
                floor[j] = floor[j].min(power[(i, j)]);
            }
        }
    }
    let epsilon: f64 = floor.iter().sum();
    if !(epsilon > 0.0) {
        return Err(Error::Assumption {
            name: "H3",
            detail: format!("no common lower bound for K^{ell}: every column has a zero entry"),
        });
    }
    let psi = DiscreteMeasure::from_unnormalized(floor)?;
    Ok(Minorization { ell, epsilon, psi })
}

/// Finds `c1 = min K_μ(i, j) / Ψ_j` and `c2 = max K_μ(i, j) / Ψ_j` over the grid.
///
/// Fails when `K_μ(i, j) > 0` for some `j` with `Ψ_j = 0` (no finite `c2`)
/// or when `c1 = 0`.
pub fn check_lower_upper<F: SubMarkovFamily + ?Sized>(
    family: &F,
    grid: &[DiscreteMeasure],
    psi: &DiscreteMeasure,
) -> Result<LowerUpper> {
    let m = family.state_count();
    require_grid(grid, m)?;
    if psi.len() != m {
        return Err(Error::invalid("reference measure has the wrong number of states"));
    }
    let mut c1 = f64::INFINITY;
    let mut c2: f64 = 0.0;
    for mu in grid {
        let k = family.kernel(mu);
        for i in 0..m {
            for j in 0..m {
                let p = psi.get(j);
                if p > 0.0 {
                    let ratio = k[(i, j)] / p;
                    c1 = c1.min(ratio);
                    c2 = c2.max(ratio);
                } else if k[(i, j)] > 0.0 {
                    return Err(Error::Assumption {
                        name: "lower/upper bound",
                        detail: format!("K({i}, {j}) > 0 where the reference measure vanishes"),
                    });
                }
            }
        }
    }
    if !(c1 > 0.0) {
        return Err(Error::Assumption { name: "lower/upper bound", detail: "lower constant c1 is zero".into() });
    }
    Ok(LowerUpper { c1, c2 })
}

/// Largest row sum of `A_μ = (I - K_μ)^{-1}` over the grid.
pub fn max_absorption_time<F: SubMarkovFamily + ?Sized>(family: &F, grid: &[DiscreteMeasure]) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for mu in grid {
        let a = super::kernel::fundamental_kernel(&family.kernel(mu))?;
        worst = row_sums(&a).into_iter().fold(worst, f64::max);
    }
    Ok(worst)
}
