//! The self-interacting chain.
//!
//! From `X_0 = x_0` and `μ_0 = δ_{x_0}`, each step draws a candidate from the
//! sub-Markov kernel `K_{μ_n}(X_n, ·)`. If the walker is killed it is reborn at
//! a point drawn from `μ_n`. The new state is then appended to the occupation
//! measure with weight `η_{n+1}`, so `μ_{n+1} = (1 - γ_{n+1}) μ_n + γ_{n+1} δ_{X_{n+1}}`.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::euler::{EulerModel, Transition};
use crate::measure::{Particle, StepSchedule, WeightedEmpiricalMeasure};
use crate::oracle::SubMarkovFamily;
use crate::{seeded_rng, Error, Result, SimRng};

/// A sub-Markov kernel that depends on the occupation measure.
pub trait KilledKernel: Send + Sync {
    type State: Particle;

    fn transition(
        &self,
        x: &Self::State,
        mu: &WeightedEmpiricalMeasure<Self::State>,
        rng: &mut SimRng,
    ) -> Result<Transition<Self::State>>;

    /// Checks that `x` is a legal starting point.
    fn admits(&self, _x: &Self::State) -> bool {
        true
    }
}

impl<const D: usize> KilledKernel for EulerModel<D> {
    type State = [f64; D];

    fn transition(&self, x: &[f64; D], mu: &WeightedEmpiricalMeasure<[f64; D]>, rng: &mut SimRng) -> Result<Transition<[f64; D]>> {
        self.kernel_step(x, mu, rng)
    }

    fn admits(&self, x: &[f64; D]) -> bool {
        self.domain().contains(x)
    }
}

/// Adapts a finite family `μ ↦ K_μ` to the chain. Each step reads the
/// occupation frequencies in O(m) and draws from row `X_n` of `K_{μ_n}`.
#[derive(Debug, Clone)]
pub struct FiniteChain<F> {
    family: F,
}

impl<F: SubMarkovFamily> FiniteChain<F> {
    pub fn new(family: F) -> Self {
        Self { family }
    }

    pub fn family(&self) -> &F {
        &self.family
    }
}

impl<F: SubMarkovFamily> KilledKernel for FiniteChain<F> {
    type State = usize;

    fn transition(&self, x: &usize, mu: &WeightedEmpiricalMeasure<usize>, rng: &mut SimRng) -> Result<Transition<usize>> {
        let m = self.family.state_count();
        let freq = mu.state_distribution(m);
        let mut row = vec![0.0; m];
        self.family.row(&freq, *x, &mut row);
        let mut u: f64 = rng.random();
        for (j, p) in row.iter().enumerate() {
            if u < *p {
                return Ok(Transition::Alive(j));
            }
            u -= p;
        }
        Ok(Transition::Killed)
    }

    fn admits(&self, x: &usize) -> bool {
        *x < self.family.state_count()
    }
}

/// Equally spaced bins on `[lower, upper]` over the scalar coordinate of each
/// point. Points outside the window are counted in the nearest edge bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSpec {
    pub lower: f64,
    pub upper: f64,
    pub bins: usize,
}

impl HistogramSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lower < self.upper) || !self.lower.is_finite() || !self.upper.is_finite() || self.bins == 0 {
            return Err(Error::invalid("histogram needs lower < upper and at least one bin"));
        }
        Ok(())
    }

    /// One bin per state of a finite space.
    pub fn states(m: usize) -> Self {
        Self { lower: -0.5, upper: m as f64 - 0.5, bins: m }
    }

    pub fn bin(&self, v: f64) -> usize {
        let pos = (v - self.lower) / (self.upper - self.lower) * self.bins as f64;
        if pos.is_nan() || pos < 0.0 {
            0
        } else {
            (pos as usize).min(self.bins - 1)
        }
    }

    /// Recomputes bin masses from the full particle list.
    pub fn evaluate<P: Particle>(&self, mu: &WeightedEmpiricalMeasure<P>) -> Vec<f64> {
        let mut out = vec![0.0; self.bins];
        for (x, p) in mu.iter() {
            out[self.bin(x.coordinate())] += p;
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig<S> {
    pub schedule: StepSchedule,
    pub n_steps: u64,
    pub seed: u64,
    pub x0: S,
    pub snapshot_every: u64,
    /// Exponent `p` of `V(x) = |x|^p`, tracked as `μ_n(V)` when set.
    #[serde(default)]
    pub lyapunov: Option<f64>,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
}

impl<S> RunConfig<S> {
    pub fn validate(&self) -> Result<()> {
        self.schedule.validate()?;
        if self.n_steps == 0 {
            return Err(Error::invalid("n_steps must be at least 1"));
        }
        if self.snapshot_every == 0 {
            return Err(Error::invalid("snapshot_every must be at least 1"));
        }
        if let Some(p) = self.lyapunov {
            if !(p >= 0.0 && p.is_finite()) {
                return Err(Error::invalid(format!("Lyapunov exponent must be nonnegative, got {p}")));
            }
        }
        if let Some(h) = &self.histogram {
            h.validate()?;
        }
        Ok(())
    }
}

/// Summary of the chain at step `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub n: u64,
    pub kill_count: u64,
    pub gamma_n: f64,
    /// Mean and variance of the scalar coordinate under `μ_n`.
    pub mean: f64,
    pub variance: f64,
    pub histogram: Vec<f64>,
    pub lyapunov: Option<f64>,
    pub lyapunov_max: Option<f64>,
    /// Position of the random stream, in 32-bit words consumed.
    pub rng_words: u64,
}

/// `μ(f)` maintained under `μ ← (1 - γ) μ + γ δ_x` with a lazy common scale
/// so that each update touches one entry.
#[derive(Debug, Clone)]
struct RunningIntegrals {
    raw: Vec<f64>,
    scale: f64,
}

impl RunningIntegrals {
    fn new(len: usize) -> Self {
        Self { raw: vec![0.0; len], scale: 1.0 }
    }

    fn update(&mut self, gamma: f64, hits: impl Iterator<Item = (usize, f64)>) {
        if gamma >= 1.0 {
            self.raw.iter_mut().for_each(|v| *v = 0.0);
            self.scale = 1.0;
        } else {
            self.scale *= 1.0 - gamma;
        }
        for (k, v) in hits {
            self.raw[k] += gamma * v / self.scale;
        }
        if self.scale < 1e-200 {
            let s = self.scale;
            self.raw.iter_mut().for_each(|v| *v *= s);
            self.scale = 1.0;
        }
    }

    fn get(&self, k: usize) -> f64 {
        self.raw[k] * self.scale
    }
}

/// State of one chain.
#[derive(Debug, Clone)]
pub struct Chain<P: Particle> {
    pub state: P,
    pub measure: WeightedEmpiricalMeasure<P>,
    pub n: u64,
    pub kill_count: u64,
    gamma: f64,
    scalar: RunningIntegrals,
    histogram: Option<(HistogramSpec, RunningIntegrals)>,
    lyapunov: Option<f64>,
    lyapunov_max: f64,
}

/// Slots of `scalar`: first and second moment of the coordinate, then `|x|^p`.
const SLOT_MEAN: usize = 0;
const SLOT_SQUARE: usize = 1;
const SLOT_LYAPUNOV: usize = 2;

impl<P: Particle> Chain<P> {
    /// `X_0 = x0`, `μ_0 = δ_{x0}` with weight `η_1`.
    pub fn new(x0: P, schedule: &StepSchedule, lyapunov: Option<f64>, histogram: Option<HistogramSpec>) -> Result<Self> {
        let mut measure = WeightedEmpiricalMeasure::new();
        let gamma = schedule.append(&mut measure, x0.clone(), 1)?;
        let mut chain = Self {
            state: x0.clone(),
            measure,
            n: 0,
            kill_count: 0,
            gamma,
            scalar: RunningIntegrals::new(3),
            histogram: histogram.map(|h| (h, RunningIntegrals::new(h.bins))),
            lyapunov,
            lyapunov_max: 0.0,
        };
        chain.record(&x0, gamma);
        Ok(chain)
    }

    fn record(&mut self, x: &P, gamma: f64) {
        let c = x.coordinate();
        let v = self.lyapunov.map_or(0.0, |p| x.norm().powf(p));
        self.scalar.update(gamma, [(SLOT_MEAN, c), (SLOT_SQUARE, c * c), (SLOT_LYAPUNOV, v)].into_iter());
        if let Some((spec, hist)) = &mut self.histogram {
            hist.update(gamma, std::iter::once((spec.bin(c), 1.0)));
        }
        if self.lyapunov.is_some() {
            self.lyapunov_max = self.lyapunov_max.max(self.scalar.get(SLOT_LYAPUNOV));
        }
    }

    /// One step of the chain. Returns whether the walker was killed.
    pub fn step<K: KilledKernel<State = P>>(&mut self, kernel: &K, schedule: &StepSchedule, rng: &mut SimRng) -> Result<bool> {
        let index = self.n + 1;
        let wrap = |e: Error| Error::Step { step: index, source: Box::new(e) };
        let (next, killed) = match kernel.transition(&self.state, &self.measure, rng).map_err(wrap)? {
            Transition::Alive(y) => (y, false),
            Transition::Killed => (self.measure.sample(rng).map_err(wrap)?.clone(), true),
        };
        let gamma = schedule.append(&mut self.measure, next.clone(), index + 1).map_err(wrap)?;
        self.record(&next, gamma);
        self.state = next;
        self.n = index;
        self.gamma = gamma;
        if killed {
            self.kill_count += 1;
        }
        Ok(killed)
    }

    pub fn snapshot(&self, rng: &SimRng) -> Snapshot {
        let mean = self.scalar.get(SLOT_MEAN);
        Snapshot {
            n: self.n,
            kill_count: self.kill_count,
            gamma_n: self.gamma,
            mean,
            variance: (self.scalar.get(SLOT_SQUARE) - mean * mean).max(0.0),
            histogram: self
                .histogram
                .as_ref()
                .map(|(spec, h)| (0..spec.bins).map(|k| h.get(k)).collect())
                .unwrap_or_default(),
            lyapunov: self.lyapunov.map(|_| self.scalar.get(SLOT_LYAPUNOV)),
            lyapunov_max: self.lyapunov.map(|_| self.lyapunov_max),
            rng_words: rng.get_word_pos() as u64,
        }
    }
}

/// Result of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput<P: Particle> {
    pub snapshots: Vec<Snapshot>,
    pub measure: WeightedEmpiricalMeasure<P>,
    pub final_state: P,
    pub kill_count: u64,
    pub seed: u64,
}

/// Runs `n_steps` steps, emitting a snapshot at `n = 0` and every
/// `snapshot_every` steps, plus one at the end.
pub fn run<K: KilledKernel>(kernel: &K, config: &RunConfig<K::State>) -> Result<RunOutput<K::State>> {
    config.validate()?;
    if !kernel.admits(&config.x0) {
        return Err(Error::invalid(format!("initial state {:?} is outside the state space", config.x0)));
    }
    let mut rng = seeded_rng(config.seed);
    let mut chain = Chain::new(config.x0.clone(), &config.schedule, config.lyapunov, config.histogram)?;
    let mut snapshots = vec![chain.snapshot(&rng)];
    for _ in 0..config.n_steps {
        chain.step(kernel, &config.schedule, &mut rng)?;
        if chain.n % config.snapshot_every == 0 || chain.n == config.n_steps {
            snapshots.push(chain.snapshot(&rng));
        }
    }
    Ok(RunOutput {
        snapshots,
        kill_count: chain.kill_count,
        final_state: chain.state,
        measure: chain.measure,
        seed: config.seed,
    })
}

/// Runs independent replicas on the thread pool, replica `r` using seed `seed + r`.
pub fn run_replicas<K: KilledKernel>(
    kernel: &K,
    config: &RunConfig<K::State>,
    replicas: usize,
) -> Result<Vec<RunOutput<K::State>>> {
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let mut c = config.clone();
            c.seed = config.seed.wrapping_add(r);
            run(kernel, &c)
        })
        .collect()
}

/// Kill frequency between two snapshots.
pub fn kill_rate(from: &Snapshot, to: &Snapshot) -> f64 {
    if to.n <= from.n {
        return 0.0;
    }
    (to.kill_count - from.kill_count) as f64 / (to.n - from.n) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::DiscreteMeasure;
    use crate::oracle::ConstantKernel;
    use nalgebra::DMatrix;

    fn config<S>(x0: S, n: u64) -> RunConfig<S> {
        RunConfig {
            schedule: StepSchedule::ConstantWeight,
            n_steps: n,
            seed: 17,
            x0,
            snapshot_every: 100,
            lyapunov: Some(2.0),
            histogram: Some(HistogramSpec { lower: -1.0, upper: 1.0, bins: 20 }),
        }
    }

    #[test]
    fn same_seed_same_snapshots() {
        let model = EulerModel::benchmark(0.5, 0.01).unwrap();
        let a = run(&model, &config([0.0], 2000)).unwrap();
        let b = run(&model, &config([0.0], 2000)).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.measure.points(), b.measure.points());
        let mut other = config([0.0], 2000);
        other.seed = 18;
        assert_ne!(run(&model, &other).unwrap().snapshots, a.snapshots);
    }

    #[test]
    fn running_summaries_match_recomputation() {
        let model = EulerModel::benchmark(4.0, 0.01).unwrap();
        for schedule in [StepSchedule::ConstantWeight, StepSchedule::Polynomial { alpha: 1.5 }, StepSchedule::StretchedExponential { alpha: 0.4 }] {
            let mut cfg = config([0.2], 5000);
            cfg.schedule = schedule;
            let out = run(&model, &cfg).unwrap();
            let last = out.snapshots.last().unwrap();
            let spec = cfg.histogram.unwrap();
            let fresh = spec.evaluate(&out.measure);
            assert!((last.histogram.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            for (a, b) in last.histogram.iter().zip(&fresh) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
            let mean = out.measure.integrate(|x| x[0]).unwrap();
            assert!((last.mean - mean).abs() < 1e-12);
            assert!((last.mean - out.measure.mean()[0]).abs() < 1e-12);
            let v = out.measure.integrate(|x| x[0] * x[0]).unwrap();
            assert!((last.lyapunov.unwrap() - v).abs() < 1e-12);
            assert!(last.lyapunov_max.unwrap() <= 1.0);
            assert_eq!(last.n, 5000);
            assert_eq!(out.measure.len(), 5001);
        }
    }

    #[test]
    fn rebirth_lands_in_support() {
        let model = EulerModel::benchmark(0.5, 0.04).unwrap();
        let mut rng = seeded_rng(2);
        let schedule = StepSchedule::ConstantWeight;
        let mut chain = Chain::new([0.95], &schedule, None, None).unwrap();
        let mut kills = 0;
        for _ in 0..3000 {
            let before: Vec<f64> = chain.measure.points().iter().map(|p| p[0]).collect();
            if chain.step(&model, &schedule, &mut rng).unwrap() {
                kills += 1;
                assert!(before.contains(&chain.state[0]));
            }
        }
        assert!(kills > 0);
    }

    #[test]
    fn certain_death_freezes_chain() {
        let chain = FiniteChain::new(ConstantKernel::new(DMatrix::zeros(3, 3)).unwrap());
        let mut cfg = config(1usize, 500);
        cfg.histogram = Some(HistogramSpec::states(3));
        let out = run(&chain, &cfg).unwrap();
        assert!(out.measure.points().iter().all(|x| *x == 1));
        assert_eq!(out.kill_count, 500);
        let hist = &out.snapshots.last().unwrap().histogram;
        assert_eq!((hist[0], hist[2]), (0.0, 0.0));
        assert!((hist[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn no_killing_matches_matrix_powers() {
        // Last-step law of a plain Markov chain against P^n, by chi-square over replicas.
        let p = DMatrix::from_row_slice(3, 3, &[0.2, 0.5, 0.3, 0.6, 0.1, 0.3, 0.3, 0.3, 0.4]);
        let chain = FiniteChain::new(ConstantKernel::new(p.clone()).unwrap());
        let steps = 4;
        let law = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]) * p.pow(steps as u32);
        let replicas = 20_000u64;
        let mut counts = [0u64; 3];
        for seed in 0..replicas {
            let mut cfg = config(0usize, steps);
            cfg.seed = seed;
            cfg.histogram = None;
            let out = run(&chain, &cfg).unwrap();
            assert_eq!(out.kill_count, 0);
            counts[out.final_state] += 1;
        }
        let chi2: f64 = (0..3)
            .map(|j| {
                let e = law[(0, j)] * replicas as f64;
                (counts[j] as f64 - e).powi(2) / e
            })
            .sum();
        // 99th percentile of chi-square with 2 degrees of freedom.
        assert!(chi2 < 9.21, "chi2 {chi2}, counts {counts:?}");
    }

    #[test]
    fn finite_chain_tracks_state_frequencies() {
        let family = crate::oracle::MeanFieldFiniteKernel::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]], 0.9, 1.0).unwrap();
        let chain = FiniteChain::new(family);
        let mut cfg = config(0usize, 20_000);
        cfg.histogram = Some(HistogramSpec::states(2));
        cfg.lyapunov = Some(0.0);
        let out = run(&chain, &cfg).unwrap();
        let last = out.snapshots.last().unwrap();
        let freq = DiscreteMeasure::new(out.measure.state_distribution(2)).unwrap();
        assert!((last.histogram[0] - freq.get(0)).abs() < 1e-12);
        assert!((last.lyapunov.unwrap() - 1.0).abs() < 1e-12);
        let rate = kill_rate(&out.snapshots[0], last);
        // Symmetric instance: the QSD is uniform and kills with probability 1 - κ e^{-β/2}.
        let expected = 1.0 - 0.9 * (-0.5f64).exp();
        assert!((rate - expected).abs() < 0.02, "{rate} vs {expected}");
    }

    #[test]
    fn replicas_use_consecutive_seeds() {
        let model = EulerModel::benchmark(0.5, 0.01).unwrap();
        let cfg = config([0.0], 300);
        let reps = run_replicas(&model, &cfg, 3).unwrap();
        for (r, out) in reps.iter().enumerate() {
            let mut c = cfg.clone();
            c.seed = cfg.seed + r as u64;
            assert_eq!(out.seed, c.seed);
            assert_eq!(run(&model, &c).unwrap().snapshots, out.snapshots);
        }
    }

    #[test]
    fn rejects_invalid_runs() {
        let model = EulerModel::benchmark(0.5, 0.01).unwrap();
        assert!(run(&model, &config([1.5], 10)).is_err());
        let mut cfg = config([0.0], 0);
        assert!(run(&model, &cfg).is_err());
        cfg.n_steps = 10;
        cfg.snapshot_every = 0;
        assert!(run(&model, &cfg).is_err());
        let chain = FiniteChain::new(ConstantKernel::scaled_identity(2, 0.5).unwrap());
        assert!(run(&chain, &config(5usize, 10)).is_err());
    }
}
