//! Experiment documents.
//!
//! A document is a JSON object with the keys `command`, `model`, `schedule`,
//! `run`, `analysis` and `output`. Unknown keys are rejected everywhere. Which
//! sections are required depends on the command; [`ExperimentConfig::validate`]
//! reports the first missing or inconsistent field by its path.
//!
//! Documented defaults: `run.replicas = 1`, `run.lyapunov` and
//! `run.histogram` unset, `analysis.bandwidth = "silverman"`,
//! `analysis.fixed_point` = damping 0.5, tolerance 1e-12, 100000 iterations.

use serde::{Deserialize, Serialize};

use crate::analysis::{Bandwidth, Grid};
use crate::driver::{HistogramSpec, RunConfig};
use crate::euler::{EulerModel, NoiseSpec, TruncationMap};
use crate::measure::{DiscreteMeasure, StepSchedule};
use crate::oracle::{ConstantKernel, FixedPointOptions, MeanFieldFiniteKernel, SubMarkovFamily};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Simulate,
    Oracle,
    Ode,
    Check,
    FixedPoints,
    Hsweep,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Oracle => "oracle",
            Command::Ode => "ode",
            Command::Check => "check",
            Command::FixedPoints => "fixed-points",
            Command::Hsweep => "hsweep",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    /// `K_μ(i, j) = κ P(i, j) e^{-β μ_j} / max(1, Σ_j P(i, j) e^{-β μ_j})`.
    Finite { p: Vec<Vec<f64>>, kappa: f64, beta: f64 },
    /// A fixed sub-stochastic matrix.
    Matrix { k: Vec<Vec<f64>> },
    /// Brownian motion on `(-1, 1)` with drift `γ · mean(μ)`.
    Benchmark { gamma: f64, h: f64 },
    /// `-θ (x - m) + c tanh(mean(μ) - x)` on `(0, ∞)`.
    OuInteraction {
        theta: f64,
        center: f64,
        coupling: f64,
        h: f64,
        #[serde(default)]
        truncation: Option<f64>,
    },
    /// `-x^p + c ∫ tanh(x - y) μ(dy)` on `(0, ∞)`.
    Superlinear {
        power: f64,
        coupling: f64,
        h: f64,
        noise: NoiseSpec,
        #[serde(default)]
        truncation: Option<f64>,
    },
}

impl ModelSpec {
    pub fn is_finite(&self) -> bool {
        matches!(self, ModelSpec::Finite { .. } | ModelSpec::Matrix { .. })
    }

    pub fn finite_family(&self) -> Result<Box<dyn SubMarkovFamily>> {
        match self {
            ModelSpec::Finite { p, kappa, beta } => {
                Ok(Box::new(MeanFieldFiniteKernel::from_rows(p, *kappa, *beta).map_err(at("model"))?))
            }
            ModelSpec::Matrix { k } => Ok(Box::new(ConstantKernel::from_rows(k).map_err(at("model.k"))?)),
            _ => Err(Error::Config("model: this command needs a finite model (kind \"finite\" or \"matrix\")".into())),
        }
    }

    pub fn euler_model(&self) -> Result<EulerModel<1>> {
        let truncated = |m: EulerModel<1>, r: &Option<f64>| -> Result<EulerModel<1>> {
            Ok(match r {
                Some(r) => m.with_truncation(TruncationMap::new(*r).map_err(at("model.truncation"))?),
                None => m,
            })
        };
        match self {
            ModelSpec::Benchmark { gamma, h } => EulerModel::benchmark(*gamma, *h).map_err(at("model")),
            ModelSpec::OuInteraction { theta, center, coupling, h, truncation } => {
                truncated(EulerModel::ou_interaction(*theta, *center, *coupling, *h).map_err(at("model"))?, truncation)
            }
            ModelSpec::Superlinear { power, coupling, h, noise, truncation } => {
                truncated(EulerModel::superlinear(*power, *coupling, *h, *noise).map_err(at("model"))?, truncation)
            }
            _ => Err(Error::Config("model: this command needs a diffusion model".into())),
        }
    }

    /// The same model with step `h` replaced, for step-size sweeps.
    pub fn with_h(&self, new_h: f64) -> Result<Self> {
        let mut out = self.clone();
        match &mut out {
            ModelSpec::Benchmark { h, .. } | ModelSpec::OuInteraction { h, .. } | ModelSpec::Superlinear { h, .. } => {
                *h = new_h
            }
            _ => return Err(Error::Config("model: step sweeps need a diffusion model".into())),
        }
        Ok(out)
    }
}

/// Weight schedules accepted in documents. `constant-gamma` is recognised
/// only to be refused with an explanation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    ConstantWeight,
    Polynomial { alpha: f64 },
    StretchedExponential { alpha: f64 },
    ConstantGamma { gamma: f64 },
}

impl ScheduleSpec {
    pub fn to_schedule(self) -> Result<StepSchedule> {
        let s = match self {
            ScheduleSpec::ConstantWeight => StepSchedule::ConstantWeight,
            ScheduleSpec::Polynomial { alpha } => StepSchedule::Polynomial { alpha },
            ScheduleSpec::StretchedExponential { alpha } => StepSchedule::StretchedExponential { alpha },
            ScheduleSpec::ConstantGamma { gamma } => {
                return Err(Error::Config(format!(
                    "schedule: a constant step gamma_n = {gamma} is not allowed; the steps must satisfy \
                     gamma_n = o(1/log n) and sum gamma_n^2 < infinity. Use constant-weight, polynomial \
                     or stretched-exponential weights."
                )))
            }
        };
        s.validate().map_err(at("schedule"))?;
        Ok(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub n_steps: u64,
    pub seed: u64,
    /// Initial point; a state index for finite models.
    pub x0: f64,
    pub snapshot_every: u64,
    #[serde(default)]
    pub lyapunov: Option<f64>,
    #[serde(default)]
    pub histogram: Option<HistogramSpec>,
    #[serde(default)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Evaluation grid for densities (`simulate`, `hsweep`).
    #[serde(default)]
    pub grid: Option<Grid>,
    #[serde(default)]
    pub bandwidth: Option<Bandwidth>,
    /// Starting measures for `oracle` and `ode`.
    #[serde(default)]
    pub starts: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub fixed_point: Option<FixedPointOptions>,
    /// Horizon and step of the `ode` command.
    #[serde(default)]
    pub t_end: Option<f64>,
    #[serde(default)]
    pub dt: Option<f64>,
    #[serde(default)]
    pub equivalence: Option<bool>,
    /// Random measures added to the vertices and barycenter in `check`.
    #[serde(default)]
    pub random_measures: Option<usize>,
    /// Step sizes for `hsweep`.
    #[serde(default)]
    pub h_values: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    pub dir: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub command: Command,
    pub model: ModelSpec,
    #[serde(default)]
    pub schedule: Option<ScheduleSpec>,
    #[serde(default)]
    pub run: Option<RunSection>,
    #[serde(default)]
    pub analysis: Option<AnalysisSection>,
    pub output: OutputSection,
}

fn at(path: &'static str) -> impl Fn(Error) -> Error {
    move |e| match e {
        Error::Config(msg) => Error::Config(msg),
        other => Error::Config(format!("{path}: {other}")),
    }
}

fn missing(path: &str, command: Command) -> Error {
    Error::Config(format!("{path}: required by command {}", command.name()))
}

impl ExperimentConfig {
    /// Parses and validates a document. Syntax and schema errors carry the
    /// line and column reported by the parser.
    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn analysis(&self) -> AnalysisSection {
        self.analysis.clone().unwrap_or_default()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.command;
        if self.output.dir.is_empty() {
            return Err(Error::Config("output.dir: must not be empty".into()));
        }
        let analysis = self.analysis();
        match c {
            Command::Simulate | Command::Hsweep => {
                self.schedule.ok_or_else(|| missing("schedule", c))?.to_schedule()?;
                let run = self.run.as_ref().ok_or_else(|| missing("run", c))?;
                if self.model.is_finite() {
                    let family = self.model.finite_family()?;
                    self.finite_start(family.state_count())?;
                } else {
                    let model = self.model.euler_model()?;
                    if !model.domain().contains(&[run.x0]) {
                        return Err(Error::Config(format!("run.x0: {} lies outside the model domain", run.x0)));
                    }
                    analysis.grid.ok_or_else(|| missing("analysis.grid", c))?.validate().map_err(at("analysis.grid"))?;
                }
                self.run_config_unchecked(run.x0).validate().map_err(at("run"))?;
                if run.replicas == Some(0) {
                    return Err(Error::Config("run.replicas: must be at least 1".into()));
                }
                if let Some(Bandwidth::Fixed(b)) = analysis.bandwidth {
                    if !(b > 0.0 && b.is_finite()) {
                        return Err(Error::Config(format!("analysis.bandwidth: must be positive, got {b}")));
                    }
                }
                if c == Command::Hsweep {
                    if self.model.is_finite() {
                        return Err(Error::Config("model: hsweep needs a diffusion model".into()));
                    }
                    let hs = analysis.h_values.as_ref().ok_or_else(|| missing("analysis.h_values", c))?;
                    if hs.len() < 2 || hs.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
                        return Err(Error::Config("analysis.h_values: need at least two positive step sizes".into()));
                    }
                }
            }
            Command::Oracle | Command::Ode => {
                let family = self.model.finite_family()?;
                self.starts(family.state_count())?;
                if c == Command::Oracle {
                    if let Some(opts) = analysis.fixed_point {
                        opts.validate().map_err(at("analysis.fixed_point"))?;
                    }
                } else {
                    let t = analysis.t_end.ok_or_else(|| missing("analysis.t_end", c))?;
                    let dt = analysis.dt.ok_or_else(|| missing("analysis.dt", c))?;
                    if !(t > 0.0 && t.is_finite() && dt > 0.0 && dt <= t) {
                        return Err(Error::Config("analysis: need 0 < dt <= t_end".into()));
                    }
                }
            }
            Command::Check => {
                self.model.finite_family()?;
                analysis.random_measures.ok_or_else(|| missing("analysis.random_measures", c))?;
            }
            Command::FixedPoints => match self.model {
                ModelSpec::Benchmark { gamma, .. } if gamma > 0.0 && gamma.is_finite() => {}
                ModelSpec::Benchmark { gamma, .. } => {
                    return Err(Error::Config(format!("model.gamma: must be positive, got {gamma}")))
                }
                _ => return Err(Error::Config("model: fixed-points needs the benchmark model".into())),
            },
        }
        Ok(())
    }

    fn finite_start(&self, m: usize) -> Result<usize> {
        let run = self.run.as_ref().ok_or_else(|| missing("run", self.command))?;
        let x = run.x0;
        if x < 0.0 || x.fract() != 0.0 || x >= m as f64 {
            return Err(Error::Config(format!("run.x0: must be a state index in 0..{m}, got {x}")));
        }
        Ok(x as usize)
    }

    /// Starting measures from `analysis.starts`, checked against the state count.
    pub fn starts(&self, m: usize) -> Result<Vec<DiscreteMeasure>> {
        let starts = self.analysis().starts.ok_or_else(|| missing("analysis.starts", self.command))?;
        if starts.is_empty() {
            return Err(Error::Config("analysis.starts: need at least one starting measure".into()));
        }
        starts
            .into_iter()
            .enumerate()
            .map(|(i, s)| {
                if s.len() != m {
                    return Err(Error::Config(format!("analysis.starts[{i}]: expected {m} entries, got {}", s.len())));
                }
                DiscreteMeasure::new(s).map_err(|e| Error::Config(format!("analysis.starts[{i}]: {e}")))
            })
            .collect()
    }

    fn run_config_unchecked<S>(&self, x0: S) -> RunConfig<S> {
        let run = self.run.as_ref().expect("run section checked by caller");
        RunConfig {
            schedule: self.schedule.and_then(|s| s.to_schedule().ok()).unwrap_or(StepSchedule::ConstantWeight),
            n_steps: run.n_steps,
            seed: run.seed,
            x0,
            snapshot_every: run.snapshot_every,
            lyapunov: run.lyapunov,
            histogram: run.histogram,
        }
    }

    /// Run parameters for a finite model.
    pub fn finite_run(&self) -> Result<RunConfig<usize>> {
        let m = self.model.finite_family()?.state_count();
        let x0 = self.finite_start(m)?;
        let mut cfg = self.run_config_unchecked(x0);
        cfg.schedule = self.schedule.ok_or_else(|| missing("schedule", self.command))?.to_schedule()?;
        Ok(cfg)
    }

    /// Run parameters for a diffusion model.
    pub fn euler_run(&self) -> Result<RunConfig<[f64; 1]>> {
        let run = self.run.as_ref().ok_or_else(|| missing("run", self.command))?;
        let mut cfg = self.run_config_unchecked([run.x0]);
        cfg.schedule = self.schedule.ok_or_else(|| missing("schedule", self.command))?.to_schedule()?;
        Ok(cfg)
    }

    pub fn replicas(&self) -> usize {
        self.run.as_ref().and_then(|r| r.replicas).unwrap_or(1)
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.analysis().bandwidth.unwrap_or(Bandwidth::Silverman)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SIMULATE: &str = r#"{
        "command": "simulate",
        "model": {"kind": "benchmark", "gamma": 0.5, "h": 0.01},
        "schedule": {"kind": "constant-weight"},
        "run": {"n_steps": 1000, "seed": 7, "x0": 0.0, "snapshot_every": 100},
        "analysis": {"grid": {"lower": -1.0, "upper": 1.0, "points": 201}},
        "output": {"dir": "out"}
    }"#;

    const ORACLE: &str = r#"{
        "command": "oracle",
        "model": {"kind": "finite", "p": [[0.5, 0.5], [0.5, 0.5]], "kappa": 0.9, "beta": -4.0},
        "analysis": {"starts": [[0.9, 0.1], [0.5, 0.5], [0.1, 0.9]]},
        "output": {"dir": "out"}
    }"#;

    #[test]
    fn parses_worked_examples() {
        let sim = ExperimentConfig::from_json_str(SIMULATE).unwrap();
        assert_eq!(sim.command, Command::Simulate);
        assert_eq!(sim.replicas(), 1);
        assert_eq!(sim.bandwidth(), Bandwidth::Silverman);
        assert_eq!(sim.euler_run().unwrap().n_steps, 1000);
        let oracle = ExperimentConfig::from_json_str(ORACLE).unwrap();
        assert_eq!(oracle.starts(2).unwrap().len(), 3);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = SIMULATE.replace("\"seed\": 7", "\"seed\": 7, \"sede\": 1");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_string().contains("line"), "{err}");
        let top = SIMULATE.replace("\"command\"", "\"extra\": 1, \"command\"");
        assert!(ExperimentConfig::from_json_str(&top).unwrap_err().is_config());
    }

    #[test]
    fn missing_kappa_is_rejected() {
        let text = ORACLE.replace("\"kappa\": 0.9, ", "");
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("kappa"), "{err}");
    }

    #[test]
    fn constant_gamma_is_refused_with_reason() {
        let text = SIMULATE.replace(r#"{"kind": "constant-weight"}"#, r#"{"kind": "constant-gamma", "gamma": 0.01}"#);
        let err = ExperimentConfig::from_json_str(&text).unwrap_err();
        assert!(err.is_config() && err.to_string().contains("o(1/log n)"), "{err}");
    }

    #[test]
    fn semantic_errors_name_the_field() {
        for (from, to, field) in [
            ("\"x0\": 0.0", "\"x0\": 3.0", "run.x0"),
            ("\"n_steps\": 1000", "\"n_steps\": 0", "run"),
            ("\"h\": 0.01", "\"h\": -0.01", "model"),
            ("\"points\": 201", "\"points\": 1", "analysis.grid"),
            (r#""kind": "constant-weight""#, r#""kind": "polynomial", "alpha": -2.0"#, "schedule"),
        ] {
            let err = ExperimentConfig::from_json_str(&SIMULATE.replace(from, to)).unwrap_err();
            assert!(err.is_config() && err.to_string().contains(&format!("error: {field}")), "{field}: {err}");
        }
        let bad_start = ORACLE.replace("[0.1, 0.9]]", "[0.1, 0.8]]");
        assert!(ExperimentConfig::from_json_str(&bad_start).unwrap_err().to_string().contains("analysis.starts[2]"));
        let wrong_kind = ORACLE.replace("\"oracle\"", "\"fixed-points\"");
        assert!(ExperimentConfig::from_json_str(&wrong_kind).is_err());
    }

    #[test]
    fn finite_simulation_needs_integer_state() {
        let text = r#"{
            "command": "simulate",
            "model": {"kind": "matrix", "k": [[0.4, 0.4], [0.1, 0.1]]},
            "schedule": {"kind": "polynomial", "alpha": 0.5},
            "run": {"n_steps": 10, "seed": 1, "x0": 1.5, "snapshot_every": 5},
            "output": {"dir": "o"}
        }"#;
        assert!(ExperimentConfig::from_json_str(text).unwrap_err().to_string().contains("run.x0"));
        let ok = ExperimentConfig::from_json_str(&text.replace("1.5", "1")).unwrap();
        assert_eq!(ok.finite_run().unwrap().x0, 1);
    }

    #[test]
    fn sweep_changes_only_the_step() {
        let m = ModelSpec::Benchmark { gamma: 0.5, h: 0.04 };
        assert_eq!(m.with_h(0.02).unwrap(), ModelSpec::Benchmark { gamma: 0.5, h: 0.02 });
        assert!(ModelSpec::Matrix { k: vec![vec![0.5]] }.with_h(0.1).is_err());
    }

    #[test]
    fn garbage_never_panics() {
        for text in ["", "{", "null", "[]", "{\"command\": 3}", "\u{0}", "{\"command\":\"ode\",\"model\":{}}"] {
            assert!(ExperimentConfig::from_json_str(text).is_err());
        }
    }
}
