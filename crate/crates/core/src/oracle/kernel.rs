use nalgebra::{DMatrix, DVector};

use super::family::SubMarkovFamily;
use crate::measure::DiscreteMeasure;
use crate::{Error, Result};

/// Stop the Neumann series once `‖K^n 𝟏‖_∞` falls below this.
const SERIES_CUTOFF: f64 = 1e-14;

pub fn row_sums(k: &DMatrix<f64>) -> Vec<f64> {
    (0..k.nrows()).map(|i| k.row(i).sum()).collect()
}

/// `δ(i) = 1 - Σ_j K(i, j)`, clamped at zero against rounding.
pub fn killing_probabilities(k: &DMatrix<f64>) -> Vec<f64> {
    row_sums(k).into_iter().map(|s| (1.0 - s).max(0.0)).collect()
}

/// `A = (I - K)^{-1}` by LU inversion.
///
/// Fails when `I - K` is singular, which means `K` has spectral radius one
/// and the absorption time is not integrable.
pub fn fundamental_kernel(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let m = k.nrows();
    let system = DMatrix::identity(m, m) - k;
    let inverse = system
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Singular("I - K is not invertible; the kernel does not kill uniformly".into()))?;
    if inverse.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("fundamental kernel has non-finite entries".into()));
    }
    Ok(inverse)
}

/// Truncated Neumann series `Σ_{n=0}^{N} K^n`, with `N` the first power for
/// which `‖K^N 𝟏‖_∞ < 1e-14`. Returns the sum and `N`.
pub fn fundamental_kernel_series(k: &DMatrix<f64>, max_terms: usize) -> Result<(DMatrix<f64>, usize)> {
    let m = k.nrows();
    let mut power = DMatrix::identity(m, m);
    let mut sum = power.clone();
    for n in 1..=max_terms {
        power = &power * k;
        sum += &power;
        let mass = row_sums(&power).into_iter().fold(0.0, f64::max);
        if mass < SERIES_CUTOFF {
            return Ok((sum, n));
        }
    }
    Err(Error::Assumption {
        name: "H0",
        detail: format!("Neumann series did not reach {SERIES_CUTOFF:e} within {max_terms} terms"),
    })
}

/// Row vector `μ (I - K)^{-1}` (that is, `μ A`), without normalization.
pub(crate) fn occupation_row(k: &DMatrix<f64>, mu: &[f64]) -> Result<Vec<f64>> {
    let m = k.nrows();
    if mu.len() != m {
        return Err(Error::invalid(format!("measure has {} states, kernel {}", mu.len(), m)));
    }
    // y (I - K) = μ, i.e. (I - K)^T y^T = μ^T.
    let system = (DMatrix::identity(m, m) - k).transpose();
    let rhs = DVector::from_column_slice(mu);
    let y = system
        .lu()
        .solve(&rhs)
        .ok_or_else(|| Error::Singular("I - K is not invertible".into()))?;
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular("I - K is numerically singular".into()));
    }
    Ok(y.iter().copied().collect())
}

/// Normalized `μ (I - K)^{-1}`: the invariant law of the chain reborn from `μ`.
pub fn pi_from_kernel(k: &DMatrix<f64>, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    let y = occupation_row(k, mu.as_slice())?;
    let normalizer: f64 = y.iter().sum();
    if !(normalizer > 0.0) || !normalizer.is_finite() {
        return Err(Error::NonFinite(format!("invariant-law normalizer {normalizer}")));
    }
    DiscreteMeasure::project(y.iter().map(|v| v / normalizer).collect())
}

/// `Π_μ = μ A_μ / (μ A_μ 𝟏)`.
pub fn pi_map<F: SubMarkovFamily + ?Sized>(family: &F, mu: &DiscreteMeasure) -> Result<DiscreteMeasure> {
    pi_from_kernel(&family.kernel(mu), mu)
}

/// `𝕂(i, j) = K(i, j) + δ(i) μ_j`.
pub fn redistribution_from_kernel(k: &DMatrix<f64>, mu: &DiscreteMeasure) -> DMatrix<f64> {
    let kill = killing_probabilities(k);
    DMatrix::from_fn(k.nrows(), k.ncols(), |i, j| k[(i, j)] + kill[i] * mu.get(j))
}

/// The Markov kernel `𝕂_μ` of the chain that is reborn from `μ` when killed.
pub fn redistribution_matrix<F: SubMarkovFamily + ?Sized>(family: &F, mu: &DiscreteMeasure) -> DMatrix<f64> {
    redistribution_from_kernel(&family.kernel(mu), mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{ConstantKernel, MeanFieldFiniteKernel};
    use crate::seeded_rng;
    use rand::Rng;

    /// Left eigenvector of a stochastic matrix for eigenvalue one, from the
    /// linear system (𝕂^T - I) π = 0 with the last equation replaced by Σ π = 1.
    fn stationary_by_eigen_system(kk: &DMatrix<f64>) -> Vec<f64> {
        let m = kk.nrows();
        let mut a = kk.transpose() - DMatrix::identity(m, m);
        let mut b = DVector::zeros(m);
        for j in 0..m {
            a[(m - 1, j)] = 1.0;
        }
        b[m - 1] = 1.0;
        a.lu().solve(&b).unwrap().iter().copied().collect()
    }

    #[test]
    fn zero_kernel_has_identity_fundamental() {
        let k = DMatrix::zeros(3, 3);
        assert_eq!(fundamental_kernel(&k).unwrap(), DMatrix::identity(3, 3));
        let mu = DiscreteMeasure::new(vec![0.2, 0.3, 0.5]).unwrap();
        assert_eq!(pi_from_kernel(&k, &mu).unwrap().tv_distance(&mu), 0.0);
        let kk = redistribution_from_kernel(&k, &mu);
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(kk[(i, j)], mu.get(j));
            }
        }
    }

    #[test]
    fn scaled_identity_is_geometric() {
        let k = DMatrix::identity(2, 2) * 0.5;
        let a = fundamental_kernel(&k).unwrap();
        assert!((a - DMatrix::identity(2, 2) * 2.0).abs().max() < 1e-15);
        let family = ConstantKernel::scaled_identity(3, 0.7).unwrap();
        let mu = DiscreteMeasure::new(vec![0.1, 0.6, 0.3]).unwrap();
        assert!(pi_map(&family, &mu).unwrap().tv_distance(&mu) < 1e-15);
    }

    #[test]
    fn identity_kernel_is_singular() {
        assert!(matches!(fundamental_kernel(&DMatrix::identity(2, 2)), Err(Error::Singular(_))));
    }

    #[test]
    fn inverse_matches_series_on_random_kernels() {
        let mut rng = seeded_rng(11);
        for _ in 0..20 {
            let mut k = DMatrix::from_fn(5, 5, |_, _| rng.random::<f64>());
            for i in 0..5 {
                let target = 0.9 * rng.random::<f64>();
                let s = k.row(i).sum();
                for j in 0..5 {
                    k[(i, j)] *= target / s;
                }
            }
            let inverse = fundamental_kernel(&k).unwrap();
            let (series, terms) = fundamental_kernel_series(&k, 500).unwrap();
            assert!(terms <= 500);
            assert!((inverse - series).abs().max() < 1e-12);
        }
    }

    #[test]
    fn pi_matches_eigenvector_of_reborn_chain() {
        let k = ConstantKernel::from_rows(&[vec![0.4, 0.4], vec![0.1, 0.1]]).unwrap();
        let mu = DiscreteMeasure::uniform(2);
        let pi = pi_map(&k, &mu).unwrap();
        let eig = stationary_by_eigen_system(&redistribution_matrix(&k, &mu));
        for (a, b) in pi.as_slice().iter().zip(&eig) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn redistribution_rows_are_stochastic_and_pi_invariant() {
        let p = vec![
            vec![0.1, 0.2, 0.3, 0.4],
            vec![0.25, 0.25, 0.25, 0.25],
            vec![0.7, 0.1, 0.1, 0.1],
            vec![0.0, 0.5, 0.0, 0.5],
        ];
        let family = MeanFieldFiniteKernel::from_rows(&p, 0.8, 2.0).unwrap();
        let mu = DiscreteMeasure::new(vec![0.4, 0.1, 0.2, 0.3]).unwrap();
        let kk = redistribution_matrix(&family, &mu);
        for s in row_sums(&kk) {
            assert!((s - 1.0).abs() < 1e-12);
        }
        let pi = pi_map(&family, &mu).unwrap();
        let row = DMatrix::from_row_slice(1, 4, pi.as_slice()) * &kk;
        let moved = DiscreteMeasure::project(row.iter().copied().collect()).unwrap();
        assert!(moved.tv_distance(&pi) < 1e-12);
    }

    #[test]
    fn no_killing_leaves_kernel_unchanged() {
        let k = DMatrix::from_row_slice(2, 2, &[0.3, 0.7, 1.0, 0.0]);
        let mu = DiscreteMeasure::new(vec![0.5, 0.5]).unwrap();
        assert_eq!(redistribution_from_kernel(&k, &mu), k);
    }
}
