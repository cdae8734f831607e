//! Measures on finite and continuous state spaces.

mod discrete;
mod empirical;
mod fenwick;
mod schedule;

pub use discrete::DiscreteMeasure;
pub use empirical::{Particle, StateMass, VectorMoments, WeightedEmpiricalMeasure};
pub use fenwick::FenwickTree;
pub use schedule::StepSchedule;

/// Tolerance on the total mass of a probability vector.
pub const SIMPLEX_TOLERANCE: f64 = 1e-12;
