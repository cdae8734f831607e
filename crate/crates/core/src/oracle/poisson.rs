use nalgebra::{DMatrix, DVector};

use super::family::SubMarkovFamily;
use super::kernel::{pi_from_kernel, redistribution_from_kernel};
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Solves `(I - 𝕂_μ) g = f - Π_μ(f) 𝟏` with `Π_μ(g) = 0`.
///
/// The side condition is folded in as the rank-one correction
/// `(I - 𝕂_μ + 𝟏 Π_μ) g = f - Π_μ(f) 𝟏`, which is invertible exactly when the
/// reborn chain has a unique invariant law.
pub fn poisson_solve<F: SubMarkovFamily + ?Sized>(family: &F, mu: &DiscreteMeasure, f: &[f64]) -> Result<Vec<f64>> {
    let m = family.state_count();
    if f.len() != m || mu.len() != m {
        return Err(Error::invalid("function and measure must match the state count"));
    }
    let k = family.kernel(mu);
    let pi = pi_from_kernel(&k, mu)?;
    let kk = redistribution_from_kernel(&k, mu);
    let pf = pi.integrate(f)?;
    let system = DMatrix::from_fn(m, m, |i, j| if i == j { 1.0 } else { 0.0 } - kk[(i, j)] + pi.get(j));
    let rhs = DVector::from_iterator(m, f.iter().map(|v| v - pf));
    let g = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("Poisson system is singular: the invariant law is not unique".into()))?;
    if g.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("Poisson solution is not finite".into()));
    }
    Ok(g.iter().copied().collect())
}

/// `Σ_{n=0}^{terms-1} (𝕂_μ^n f - Π_μ(f))`.
pub fn poisson_series<F: SubMarkovFamily + ?Sized>(
    family: &F,
    mu: &DiscreteMeasure,
    f: &[f64],
    terms: usize,
) -> Result<Vec<f64>> {
    let m = family.state_count();
    if f.len() != m || mu.len() != m {
        return Err(Error::invalid("function and measure must match the state count"));
    }
    let k = family.kernel(mu);
    let pi = pi_from_kernel(&k, mu)?;
    let kk = redistribution_from_kernel(&k, mu);
    let pf = pi.integrate(f)?;
    let mut v = DVector::from_column_slice(f);
    let mut acc = DVector::zeros(m);
    for _ in 0..terms {
        acc += v.map(|x| x - pf);
        v = &kk * v;
    }
    Ok(acc.iter().copied().collect())
}
