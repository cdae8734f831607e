use std::fmt::Debug;

use rand::Rng;

use super::fenwick::FenwickTree;
use crate::{Error, Result};

/// Stored weights are rescaled once their running total passes this value.
const RESCALE_THRESHOLD: f64 = 1e300;
/// Largest log-weight offset admitted before a rescaling epoch.
const MAX_LOG_OFFSET: f64 = 690.0;

/// A point that can be stored in a [`WeightedEmpiricalMeasure`].
///
/// `Moments` is a running aggregate updated on every append (per-state mass
/// for finite spaces, first and second moments for vectors), which lets
/// mean-field drifts read the measure in O(1).
pub trait Particle: Clone + Debug + Send + Sync + 'static {
    type Moments: Clone + Debug + Default + Send + Sync;

    fn is_finite(&self) -> bool;

    fn accumulate(&self, moments: &mut Self::Moments, weight: f64);

    fn scale_moments(moments: &mut Self::Moments, factor: f64);

    /// Scalar projection used for one-dimensional summaries (first coordinate,
    /// or the state index on finite spaces).
    fn coordinate(&self) -> f64;

    /// Euclidean norm, used by Lyapunov functionals `|x|^p`.
    fn norm(&self) -> f64;
}

/// Unnormalized mass per state of a finite space.
#[derive(Debug, Clone, Default)]
pub struct StateMass(pub Vec<f64>);

impl Particle for usize {
    type Moments = StateMass;

    fn is_finite(&self) -> bool {
        true
    }

    fn accumulate(&self, moments: &mut StateMass, weight: f64) {
        if moments.0.len() <= *self {
            moments.0.resize(*self + 1, 0.0);
        }
        moments.0[*self] += weight;
    }

    fn scale_moments(moments: &mut StateMass, factor: f64) {
        moments.0.iter_mut().for_each(|m| *m *= factor);
    }

    fn coordinate(&self) -> f64 {
        *self as f64
    }

    fn norm(&self) -> f64 {
        *self as f64
    }
}

/// Unnormalized coordinatewise first and second moments.
#[derive(Debug, Clone)]
pub struct VectorMoments<const D: usize> {
    pub first: [f64; D],
    pub second: [f64; D],
}

impl<const D: usize> Default for VectorMoments<D> {
    fn default() -> Self {
        Self { first: [0.0; D], second: [0.0; D] }
    }
}

impl<const D: usize> Particle for [f64; D] {
    type Moments = VectorMoments<D>;

    fn is_finite(&self) -> bool {
        self.iter().all(|c| c.is_finite())
    }

    fn accumulate(&self, moments: &mut VectorMoments<D>, weight: f64) {
        for (i, c) in self.iter().enumerate() {
            moments.first[i] += weight * c;
            moments.second[i] += weight * c * c;
        }
    }

    fn scale_moments(moments: &mut VectorMoments<D>, factor: f64) {
        moments.first.iter_mut().for_each(|m| *m *= factor);
        moments.second.iter_mut().for_each(|m| *m *= factor);
    }

    fn coordinate(&self) -> f64 {
        self[0]
    }

    fn norm(&self) -> f64 {
        self.iter().map(|c| c * c).sum::<f64>().sqrt()
    }
}

/// Weighted occupation measure `Σ η_k δ_{x_k} / H_n`.
///
/// Particles are append-only. A Fenwick tree over the weights gives
/// O(log n) sampling; the running total is kept with compensated summation.
/// Weights are stored relative to `exp(log_scale)` so schedules with
/// super-polynomial growth do not overflow: whenever the stored total passes
/// 1e300 every stored weight is divided by it and the factor moves into
/// `log_scale`.
#[derive(Debug, Clone)]
pub struct WeightedEmpiricalMeasure<P: Particle> {
    points: Vec<P>,
    weights: Vec<f64>,
    tree: FenwickTree,
    total: f64,
    compensation: f64,
    log_scale: f64,
    moments: P::Moments,
}

impl<P: Particle> Default for WeightedEmpiricalMeasure<P> {
    fn default() -> Self {
        Self::new()
    }
}

impl<P: Particle> WeightedEmpiricalMeasure<P> {
    pub fn new() -> Self {
        Self::with_capacity(0)
    }

    pub fn with_capacity(capacity: usize) -> Self {
        Self {
            points: Vec::with_capacity(capacity),
            weights: Vec::with_capacity(capacity),
            tree: FenwickTree::with_capacity(capacity),
            total: 0.0,
            compensation: 0.0,
            log_scale: 0.0,
            moments: P::Moments::default(),
        }
    }

    /// `δ_x`.
    pub fn dirac(x: P) -> Result<Self> {
        let mut m = Self::new();
        m.push(x, 1.0)?;
        Ok(m)
    }

    /// Rebuilds a measure from stored weights, e.g. after decoding a dump.
    pub fn from_parts(points: Vec<P>, weights: Vec<f64>, log_scale: f64) -> Result<Self> {
        if points.len() != weights.len() {
            return Err(Error::invalid("points and weights differ in length"));
        }
        if !log_scale.is_finite() {
            return Err(Error::invalid("log scale must be finite"));
        }
        let mut m = Self::with_capacity(points.len());
        for (x, w) in points.into_iter().zip(weights) {
            m.append(x, w)?;
        }
        m.log_scale = log_scale;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Appends `x` with weight `eta` and returns `γ = eta / H` for the new total.
    ///
    /// Equivalent to `μ ← (1 - γ) μ + γ δ_x`.
    pub fn push(&mut self, x: P, eta: f64) -> Result<f64> {
        if !(eta.is_finite() && eta > 0.0) {
            return Err(Error::invalid(format!("particle weight must be positive and finite, got {eta}")));
        }
        let ln_eta = eta.ln() - self.log_scale;
        if ln_eta > MAX_LOG_OFFSET {
            self.rescale_to(eta.ln());
        }
        self.append(x, eta * (-self.log_scale).exp())
    }

    /// As [`push`](Self::push) with the weight given as `ln η`.
    pub fn push_log(&mut self, x: P, ln_eta: f64) -> Result<f64> {
        if !ln_eta.is_finite() {
            return Err(Error::invalid(format!("log-weight must be finite, got {ln_eta}")));
        }
        if ln_eta - self.log_scale > MAX_LOG_OFFSET {
            self.rescale_to(ln_eta);
        }
        self.append(x, (ln_eta - self.log_scale).exp())
    }

    fn append(&mut self, x: P, stored: f64) -> Result<f64> {
        if !x.is_finite() {
            return Err(Error::invalid(format!("particle {x:?} is not finite")));
        }
        if !(stored.is_finite() && stored >= 0.0) {
            return Err(Error::invalid(format!("stored weight {stored} is invalid")));
        }
        x.accumulate(&mut self.moments, stored);
        self.points.push(x);
        self.weights.push(stored);
        self.tree.push(stored);
        self.add_to_total(stored);
        let gamma = stored / self.total;
        if self.total > RESCALE_THRESHOLD {
            self.rescale_to(self.log_scale + self.total.ln());
        }
        Ok(gamma)
    }

    fn add_to_total(&mut self, value: f64) {
        // Neumaier summation.
        let t = self.total + value;
        if self.total.abs() >= value.abs() {
            self.compensation += (self.total - t) + value;
        } else {
            self.compensation += (value - t) + self.total;
        }
        self.total = t;
    }

    fn rescale_to(&mut self, new_log_scale: f64) {
        let factor = (self.log_scale - new_log_scale).exp();
        self.weights.iter_mut().for_each(|w| *w *= factor);
        self.tree.scale(factor);
        self.total *= factor;
        self.compensation *= factor;
        P::scale_moments(&mut self.moments, factor);
        self.log_scale = new_log_scale;
    }

    /// Running total of stored weights (`H_n / exp(log_scale)`).
    pub fn total(&self) -> f64 {
        self.total + self.compensation
    }

    /// `ln H_n`.
    pub fn log_total(&self) -> f64 {
        self.total().ln() + self.log_scale
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn points(&self) -> &[P] {
        &self.points
    }

    /// Stored (scaled) weights; divide by [`total`](Self::total) for probabilities.
    pub fn stored_weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn probability(&self, k: usize) -> f64 {
        self.weights[k] / self.total()
    }

    /// `γ` of the most recent append.
    pub fn last_gamma(&self) -> Option<f64> {
        self.weights.last().map(|w| w / self.total())
    }

    /// Running aggregate of stored weights, in the same scale as [`total`](Self::total).
    pub fn moments(&self) -> &P::Moments {
        &self.moments
    }

    pub fn iter(&self) -> impl Iterator<Item = (&P, f64)> + '_ {
        let total = self.total();
        self.points.iter().zip(&self.weights).map(move |(x, w)| (x, w / total))
    }

    /// Draws index `k` with probability `η_k / H_n` in O(log n).
    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<usize> {
        if self.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let u: f64 = rng.random();
        Ok(self.tree.search(u * self.tree.total()))
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<&P> {
        let k = self.sample_index(rng)?;
        Ok(&self.points[k])
    }

    /// `μ(f) = Σ η_k f(x_k) / H_n`.
    pub fn integrate<F: Fn(&P) -> f64>(&self, f: F) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        let mut acc = 0.0;
        for (x, w) in self.points.iter().zip(&self.weights) {
            let v = f(x);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("integrand at {x:?}")));
            }
            acc += w * v;
        }
        Ok(acc / self.total())
    }

    /// Nodes touched in the sampling tree so far.
    pub fn tree_node_visits(&self) -> u64 {
        self.tree.node_visits()
    }
}

impl<const D: usize> WeightedEmpiricalMeasure<[f64; D]> {
    /// Weighted mean, read from the running moments in O(1).
    pub fn mean(&self) -> [f64; D] {
        let total = self.total();
        let mut out = [0.0; D];
        if total > 0.0 {
            for (o, m) in out.iter_mut().zip(&self.moments.first) {
                *o = m / total;
            }
        }
        out
    }

    /// Coordinatewise weighted variance from the running moments.
    pub fn variance(&self) -> [f64; D] {
        let total = self.total();
        let mean = self.mean();
        let mut out = [0.0; D];
        if total > 0.0 {
            for i in 0..D {
                out[i] = (self.moments.second[i] / total - mean[i] * mean[i]).max(0.0);
            }
        }
        out
    }
}

impl WeightedEmpiricalMeasure<usize> {
    /// Occupation frequencies on `{0, .., m-1}`.
    pub fn state_distribution(&self, m: usize) -> Vec<f64> {
        let total = self.total();
        let mut out = vec![0.0; m];
        for (o, mass) in out.iter_mut().zip(&self.moments.0) {
            *o = mass / total;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;
    use proptest::prelude::*;

    #[test]
    fn first_particle_has_full_mass() {
        let mut m = WeightedEmpiricalMeasure::new();
        let gamma = m.push([0.3], 1.0).unwrap();
        assert_eq!(gamma, 1.0);
        assert_eq!(m.probability(0), 1.0);
        assert_eq!(m.mean(), [0.3]);
    }

    #[test]
    fn equal_weights_split_mass() {
        let mut m = WeightedEmpiricalMeasure::dirac(0usize).unwrap();
        m.push(1, 1.0).unwrap();
        assert_eq!(m.state_distribution(2), vec![0.5, 0.5]);
    }

    #[test]
    fn linear_weights_give_gamma_one_half_at_three() {
        let mut m = WeightedEmpiricalMeasure::new();
        let mut gamma = 0.0;
        for n in 1..=3 {
            gamma = m.push([n as f64], n as f64).unwrap();
        }
        // H_3 = 1 + 2 + 3.
        assert_eq!(gamma, 0.5);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut m = WeightedEmpiricalMeasure::new();
        assert!(m.push([f64::NAN], 1.0).is_err());
        assert!(m.push([0.0], 0.0).is_err());
        assert!(m.push([0.0], -1.0).is_err());
        assert!(m.push_log([0.0], f64::INFINITY).is_err());
        assert!(m.is_empty());
        let mut rng = seeded_rng(1);
        assert!(matches!(m.sample(&mut rng), Err(Error::EmptyMeasure)));
        assert!(m.integrate(|x| x[0]).is_err());
    }

    #[test]
    fn single_particle_always_sampled() {
        let m = WeightedEmpiricalMeasure::dirac([2.5]).unwrap();
        let mut rng = seeded_rng(7);
        for _ in 0..100 {
            assert_eq!(*m.sample(&mut rng).unwrap(), [2.5]);
        }
    }

    #[test]
    fn integrate_weighted_average() {
        let mut m = WeightedEmpiricalMeasure::new();
        m.push([0.0], 1.0).unwrap();
        m.push([1.0], 3.0).unwrap();
        assert!((m.integrate(|x| x[0]).unwrap() - 0.75).abs() < 1e-15);
        assert!(m.integrate(|_| f64::NAN).is_err());
    }

    #[test]
    fn log_weights_survive_overflowing_schedules() {
        let mut m = WeightedEmpiricalMeasure::new();
        // η_n = exp(n) overflows f64 long before n = 2000.
        for n in 1..=2000 {
            m.push_log([n as f64], n as f64).unwrap();
        }
        assert!(m.total().is_finite() && m.total() <= RESCALE_THRESHOLD);
        // H_n = e^n (1 - e^{-n}) / (1 - e^{-1}), so log H_n ≈ n - ln(1 - 1/e).
        let expected = 2000.0 - (1.0 - (-1.0f64).exp()).ln();
        assert!((m.log_total() - expected).abs() < 1e-9);
        // The last particle carries a fraction 1 - 1/e of the mass.
        let gamma = m.last_gamma().unwrap();
        assert!((gamma - (1.0 - (-1.0f64).exp())).abs() < 1e-12);
        let mean = m.mean()[0];
        assert!(mean.is_finite() && mean > 1998.0);
    }

    proptest! {
        #[test]
        fn recursion_matches_weighted_average(
            xs in prop::collection::vec(-10.0f64..10.0, 1..200),
            alpha in -0.9f64..3.0,
        ) {
            let f = |x: f64| (x * 0.7).sin() + 0.1 * x;
            let mut m = WeightedEmpiricalMeasure::new();
            let mut recursive = 0.0;
            for (k, x) in xs.iter().enumerate() {
                let eta = ((k + 1) as f64).powf(alpha);
                let gamma = m.push([*x], eta).unwrap();
                recursive = (1.0 - gamma) * recursive + gamma * f(*x);
            }
            let direct = m.integrate(|x| f(x[0])).unwrap();
            prop_assert!((direct - recursive).abs() <= 1e-10 * direct.abs().max(1.0));
            let stored: f64 = m.stored_weights().iter().sum();
            prop_assert!((stored - m.total()).abs() <= 1e-12 * m.total());
        }
    }
}
