//! Exact computations for finite state spaces.
//!
//! For a family `μ ↦ K_μ` of sub-stochastic matrices this module computes the
//! fundamental kernel `A_μ = Σ_n K_μ^n = (I - K_μ)^{-1}`, the invariant law
//! `Π_μ = μ A_μ / (μ A_μ 𝟏)` of the chain that is reborn from `μ` when
//! killed, QSD fixed points `μ = Π_μ`, the Poisson equation of the reborn
//! chain, and numerical checks of the minorization-type assumptions.

mod assumptions;
mod family;
mod fixed_point;
mod kernel;
mod poisson;

pub use assumptions::{
    check_h0, check_lower_upper, check_minorization, max_absorption_time, measure_grid, H0Certificate, LowerUpper,
    Minorization,
};
pub use family::{ConstantKernel, MeanFieldFiniteKernel, SubMarkovFamily};
pub use fixed_point::{check_qsd_characterization, qsd_fixed_point, FixedPointOptions, OracleReport, QsdCheck};
pub use kernel::{
    fundamental_kernel, fundamental_kernel_series, killing_probabilities, pi_from_kernel, pi_map,
    redistribution_from_kernel, redistribution_matrix, row_sums,
};
pub(crate) use kernel::occupation_row;
pub use poisson::{poisson_series, poisson_solve};
