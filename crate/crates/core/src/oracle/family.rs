use nalgebra::DMatrix;

use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// A measure-dependent family of sub-stochastic matrices `μ ↦ K_μ`.
///
/// `K_μ(i, j)` is the probability to move from `i` to `j` without being
/// killed; `δ_μ(i) = 1 - Σ_j K_μ(i, j)` is the killing probability.
pub trait SubMarkovFamily: Send + Sync {
    fn state_count(&self) -> usize;

    /// Writes row `i` of `K_μ` into `out`. `mu` is a probability vector.
    fn row(&self, mu: &[f64], i: usize, out: &mut [f64]);

    fn kernel(&self, mu: &DiscreteMeasure) -> DMatrix<f64> {
        self.kernel_at(mu.as_slice())
    }

    /// `K_μ` for a raw probability vector.
    fn kernel_at(&self, mu: &[f64]) -> DMatrix<f64> {
        let m = self.state_count();
        let mut k = DMatrix::zeros(m, m);
        let mut row = vec![0.0; m];
        for i in 0..m {
            self.row(mu, i, &mut row);
            for (j, v) in row.iter().enumerate() {
                k[(i, j)] = *v;
            }
        }
        k
    }
}

impl<F: SubMarkovFamily + ?Sized> SubMarkovFamily for Box<F> {
    fn state_count(&self) -> usize {
        (**self).state_count()
    }

    fn row(&self, mu: &[f64], i: usize, out: &mut [f64]) {
        (**self).row(mu, i, out)
    }

    fn kernel_at(&self, mu: &[f64]) -> DMatrix<f64> {
        (**self).kernel_at(mu)
    }
}

fn check_square_substochastic(k: &DMatrix<f64>, what: &str, require_stochastic: bool) -> Result<()> {
    if k.nrows() != k.ncols() || k.nrows() == 0 {
        return Err(Error::invalid(format!("{what} must be a non-empty square matrix")));
    }
    for i in 0..k.nrows() {
        let row = k.row(i);
        if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::invalid(format!("{what} row {i} has a negative or non-finite entry")));
        }
        let s: f64 = row.iter().sum();
        if require_stochastic && (s - 1.0).abs() > 1e-12 {
            return Err(Error::invalid(format!("{what} row {i} sums to {s}, expected 1")));
        }
        if s > 1.0 + 1e-12 {
            return Err(Error::invalid(format!("{what} row {i} sums to {s} > 1")));
        }
    }
    Ok(())
}

/// `K_μ(i, j) = κ P(i, j) exp(-β μ_j) / z_i(μ)` with
/// `z_i(μ) = max(1, Σ_j P(i, j) exp(-β μ_j))`.
///
/// Rows sum to at most `κ < 1`. Positive `β` penalizes crowded states;
/// negative `β` makes the dynamics self-attracting and can produce several
/// QSDs.
#[derive(Debug, Clone)]
pub struct MeanFieldFiniteKernel {
    p: DMatrix<f64>,
    kappa: f64,
    beta: f64,
}

impl MeanFieldFiniteKernel {
    pub fn new(p: DMatrix<f64>, kappa: f64, beta: f64) -> Result<Self> {
        check_square_substochastic(&p, "transition matrix P", true)?;
        if !(kappa > 0.0 && kappa < 1.0) {
            return Err(Error::invalid(format!("kappa must lie in (0, 1), got {kappa}")));
        }
        if !beta.is_finite() {
            return Err(Error::invalid("beta must be finite"));
        }
        Ok(Self { p, kappa, beta })
    }

    pub fn from_rows(rows: &[Vec<f64>], kappa: f64, beta: f64) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?, kappa, beta)
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }
}

impl SubMarkovFamily for MeanFieldFiniteKernel {
    fn state_count(&self) -> usize {
        self.p.nrows()
    }

    fn row(&self, mu: &[f64], i: usize, out: &mut [f64]) {
        let mut z = 0.0;
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.p[(i, j)] * (-self.beta * mu[j]).exp();
            z += *o;
        }
        let scale = self.kappa / z.max(1.0);
        out.iter_mut().for_each(|o| *o *= scale);
    }
}

/// A family that ignores `μ`: the linear (Markov) case.
#[derive(Debug, Clone)]
pub struct ConstantKernel {
    k: DMatrix<f64>,
}

impl ConstantKernel {
    pub fn new(k: DMatrix<f64>) -> Result<Self> {
        check_square_substochastic(&k, "kernel", false)?;
        Ok(Self { k })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(matrix_from_rows(rows)?)
    }

    /// `c · I`.
    pub fn scaled_identity(m: usize, c: f64) -> Result<Self> {
        Self::new(DMatrix::identity(m, m) * c)
    }
}

impl SubMarkovFamily for ConstantKernel {
    fn state_count(&self) -> usize {
        self.k.nrows()
    }

    fn row(&self, _mu: &[f64], i: usize, out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.k[(i, j)];
        }
    }

    fn kernel_at(&self, _mu: &[f64]) -> DMatrix<f64> {
        self.k.clone()
    }
}

pub(crate) fn matrix_from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let m = rows.len();
    if m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::invalid("matrix must be square and non-empty"));
    }
    Ok(DMatrix::from_fn(m, m, |i, j| rows[i][j]))
}
