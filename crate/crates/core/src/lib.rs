//! Self-interacting stochastic approximation of quasi-stationary
//! distributions (QSDs) for killed Markov dynamics whose transition kernel
//! depends on the current law of the process.
//!
//! The crate is organised by role:
//!
//! - [`measure`]: probability vectors, weighted occupation measures with
//!   logarithmic-time sampling, and weight schedules.
//! - [`oracle`]: exact finite-state computations (fundamental kernel, the
//!   invariant-law map, QSD fixed points, Poisson equation, assumption checks).
//! - [`ode`]: the limiting measure-valued flow, its almost-linear form and the
//!   time change that links them.
//! - [`euler`]: killed Euler–Maruyama kernels for McKean–Vlasov dynamics.
//! - [`driver`]: the self-interacting chain itself, with snapshots and
//!   Lyapunov monitoring.
//! - [`analysis`]: kernel density estimates, distances, and the closed-form
//!   interval benchmark.
//! - [`config`] and [`io`]: experiment documents and on-disk formats.

pub mod analysis;
pub mod config;
pub mod driver;
mod error;
pub mod euler;
pub mod io;
pub mod measure;
pub mod ode;
pub mod oracle;

pub use error::{Error, Result};

/// Random stream used throughout the crate. ChaCha is portable, so a seed
/// reproduces the same trajectory on every platform.
pub type SimRng = rand_chacha::ChaCha8Rng;

/// Builds the crate's random stream from a 64-bit seed.
pub fn seeded_rng(seed: u64) -> SimRng {
    use rand::SeedableRng;
    SimRng::seed_from_u64(seed)
}
