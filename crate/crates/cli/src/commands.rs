use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;

use qsd_core::analysis::{
    b_fixed_points, benchmark_qsd_density, density_distances, discrete_distances, kde, slope_threshold,
    stated_threshold, DensityOnGrid, Distances, Grid,
};
use qsd_core::config::ModelSpec;
use qsd_core::driver::{kill_rate, run_replicas, FiniteChain, RunOutput, Snapshot};
use qsd_core::io::{encode_measure_json, encode_particles, write_density_csv, write_path_csv, write_snapshots_csv, MeasureJson, OutputHeader};
use qsd_core::measure::DiscreteMeasure;
use qsd_core::ode::{check_time_change_equivalence, integrate_qsd_ode};
use qsd_core::oracle::{
    check_h0, check_lower_upper, check_minorization, max_absorption_time, measure_grid, qsd_fixed_point,
    FixedPointOptions, H0Certificate, LowerUpper, Minorization, OracleReport, SubMarkovFamily,
};
use qsd_core::{seeded_rng, Error, Result};

use crate::{write_json, Prepared};

const DISTINCT_TOL: f64 = 1e-6;
const H0_MAX_POWER: usize = 50;
const CHECK_SEED: u64 = 0;

struct Writer<'a> {
    prepared: &'a Prepared,
    written: Vec<PathBuf>,
}

impl<'a> Writer<'a> {
    fn new(prepared: &'a Prepared) -> Self {
        Self { prepared, written: Vec::new() }
    }

    fn header(&self) -> &'a OutputHeader {
        &self.prepared.header
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let p = self.prepared.out_dir.join(name);
        self.written.push(p.clone());
        p
    }

    fn csv<F>(&mut self, name: &str, body: F) -> Result<()>
    where
        F: FnOnce(&mut BufWriter<File>, &OutputHeader) -> Result<()>,
    {
        let path = self.path(name);
        let mut out = BufWriter::new(File::create(&path)?);
        body(&mut out, &self.prepared.header)?;
        out.flush()?;
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let path = self.path(name);
        write_json(&path, value)
    }

    fn bytes(&mut self, name: &str, data: &[u8]) -> Result<()> {
        let path = self.path(name);
        std::fs::write(path, data)?;
        Ok(())
    }
}

fn suffixed(stem: &str, ext: &str, replica: Option<usize>) -> String {
    match replica {
        Some(r) => format!("{stem}_r{r}.{ext}"),
        None => format!("{stem}.{ext}"),
    }
}

fn late_kill_rate(snapshots: &[Snapshot]) -> f64 {
    let last = snapshots.last().expect("run emits at least one snapshot");
    let half = last.n / 2;
    let from = snapshots.iter().find(|s| s.n >= half).unwrap_or(last);
    kill_rate(from, last)
}

#[derive(Serialize)]
struct FiniteSummary<'a> {
    header: &'a OutputHeader,
    model: &'static str,
    n_steps: u64,
    kill_count: u64,
    final_measure: Vec<f64>,
    oracle_qsds: Vec<Vec<f64>>,
    nearest_qsd: usize,
    tv_to_nearest_qsd: f64,
    distances_to_nearest: Distances,
    late_kill_rate: f64,
    oracle_kill_probability: f64,
}

#[derive(Serialize)]
struct BenchmarkTarget {
    b: f64,
    drift: f64,
    distances: Distances,
}

#[derive(Serialize)]
struct EulerSummary<'a> {
    header: &'a OutputHeader,
    model: &'static str,
    n_steps: u64,
    kill_count: u64,
    late_kill_rate: f64,
    mean: f64,
    variance: f64,
    bandwidth: qsd_core::analysis::Bandwidth,
    #[serde(skip_serializing_if = "Option::is_none")]
    roots: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    targets: Option<Vec<BenchmarkTarget>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    min_l1: Option<f64>,
}

fn model_name(model: &ModelSpec) -> &'static str {
    match model {
        ModelSpec::Finite { .. } => "finite",
        ModelSpec::Matrix { .. } => "matrix",
        ModelSpec::Benchmark { .. } => "benchmark",
        ModelSpec::OuInteraction { .. } => "ou-interaction",
        ModelSpec::Superlinear { .. } => "superlinear",
    }
}

/// Distinct fixed points reached from the vertices and the uniform law.
fn oracle_qsd_set<F: SubMarkovFamily + ?Sized>(family: &F, options: &FixedPointOptions) -> Result<Vec<OracleReport>> {
    let m = family.state_count();
    let mut starts: Vec<DiscreteMeasure> = (0..m).map(|i| DiscreteMeasure::dirac(m, i)).collect();
    starts.push(DiscreteMeasure::uniform(m));
    let mut reports = Vec::new();
    for s in &starts {
        reports.push(qsd_fixed_point(family, s, options)?);
    }
    Ok(distinct(reports))
}

fn distinct(reports: Vec<OracleReport>) -> Vec<OracleReport> {
    let mut out: Vec<OracleReport> = Vec::new();
    for r in reports.into_iter().filter(|r| r.converged) {
        if out.iter().all(|o| o.qsd.tv_distance(&r.qsd) > DISTINCT_TOL) {
            out.push(r);
        }
    }
    out
}

pub(crate) fn simulate(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let config = &prepared.config;
    let replicas = config.replicas();
    let mut w = Writer::new(prepared);
    if config.model.is_finite() {
        let family = config.model.finite_family()?;
        let m = family.state_count();
        let options = config.analysis().fixed_point.unwrap_or_default();
        let qsds = oracle_qsd_set(&*family, &options)?;
        if qsds.is_empty() {
            return Err(Error::InvalidInput("the oracle fixed point did not converge from any vertex".into()));
        }
        let chain = FiniteChain::new(family);
        let outputs = run_replicas(&chain, &config.finite_run()?, replicas)?;
        for (r, out) in outputs.iter().enumerate() {
            let tag = (replicas > 1).then_some(r);
            finite_outputs(&mut w, config.model.clone(), out, m, &qsds, tag)?;
        }
    } else {
        let model = config.model.euler_model()?;
        let outputs = run_replicas(&model, &config.euler_run()?, replicas)?;
        for (r, out) in outputs.iter().enumerate() {
            let tag = (replicas > 1).then_some(r);
            euler_outputs(&mut w, out, tag)?;
        }
    }
    Ok(w.written)
}

fn finite_outputs(
    w: &mut Writer,
    model: ModelSpec,
    out: &RunOutput<usize>,
    m: usize,
    qsds: &[OracleReport],
    tag: Option<usize>,
) -> Result<()> {
    w.csv(&suffixed("snapshots", "csv", tag), |f, h| write_snapshots_csv(f, h, &out.snapshots))?;
    let dist = DiscreteMeasure::from_unnormalized(out.measure.state_distribution(m))?;
    let measure = MeasureJson {
        header: Some(w.header().clone()),
        states: (0..m).map(|i| i as f64).collect(),
        weights: dist.as_slice().to_vec(),
    };
    let mut text = encode_measure_json(&measure)?;
    text.push('\n');
    w.bytes(&suffixed("final_measure", "json", tag), text.as_bytes())?;

    let mut best = (0, f64::INFINITY);
    for (i, q) in qsds.iter().enumerate() {
        let tv = dist.tv_distance(&q.qsd);
        if tv < best.1 {
            best = (i, tv);
        }
    }
    let nearest = &qsds[best.0];
    let summary = FiniteSummary {
        header: w.header(),
        model: model_name(&model),
        n_steps: out.snapshots.last().map_or(0, |s| s.n),
        kill_count: out.kill_count,
        final_measure: dist.as_slice().to_vec(),
        oracle_qsds: qsds.iter().map(|q| q.qsd.as_slice().to_vec()).collect(),
        nearest_qsd: best.0,
        tv_to_nearest_qsd: best.1,
        distances_to_nearest: discrete_distances(&dist, &nearest.qsd)?,
        late_kill_rate: late_kill_rate(&out.snapshots),
        oracle_kill_probability: nearest.kill_probability,
    };
    let name = suffixed("summary", "json", tag);
    w.json(&name, &summary)
}

/// Masses of the grid cells centred on each grid point; mass outside the
/// grid goes to the end cells.
fn binned_on_grid(out: &RunOutput<[f64; 1]>, grid: Grid) -> MeasureJson {
    let mut weights = vec![0.0; grid.points];
    let step = grid.step();
    for (x, p) in out.measure.iter() {
        let k = ((x[0] - grid.lower) / step).round();
        let k = if k.is_nan() { 0.0 } else { k.clamp(0.0, (grid.points - 1) as f64) };
        weights[k as usize] += p;
    }
    let total: f64 = weights.iter().sum();
    if total > 0.0 {
        weights.iter_mut().for_each(|v| *v /= total);
    }
    MeasureJson { header: None, states: grid.xs(), weights }
}

fn euler_density(prepared: &Prepared, out: &RunOutput<[f64; 1]>) -> Result<DensityOnGrid> {
    let grid = prepared.config.analysis().grid.ok_or_else(|| Error::Config("analysis.grid: required".into()))?;
    kde(&out.measure, prepared.config.bandwidth(), grid)
}

fn euler_outputs(w: &mut Writer, out: &RunOutput<[f64; 1]>, tag: Option<usize>) -> Result<()> {
    let prepared = w.prepared;
    let config = &prepared.config;
    let grid = config.analysis().grid.ok_or_else(|| Error::Config("analysis.grid: required".into()))?;
    w.csv(&suffixed("snapshots", "csv", tag), |f, h| write_snapshots_csv(f, h, &out.snapshots))?;
    w.bytes(&suffixed("final_particles", "bin", tag), &encode_particles(&out.measure))?;
    let mut binned = binned_on_grid(out, grid);
    binned.header = Some(w.header().clone());
    let mut text = encode_measure_json(&binned)?;
    text.push('\n');
    w.bytes(&suffixed("final_measure", "json", tag), text.as_bytes())?;
    let density = euler_density(prepared, out)?;
    w.csv(&suffixed("density", "csv", tag), |f, h| write_density_csv(f, h, &density))?;

    let (roots, targets, min_l1) = match config.model {
        ModelSpec::Benchmark { gamma, .. } => {
            let roots = b_fixed_points(gamma)?;
            let mut targets = Vec::new();
            for &b in &roots {
                let target = benchmark_qsd_density(gamma, b, grid)
                    .map_err(|e| Error::Config(format!("analysis.grid: {e}")))?;
                targets.push(BenchmarkTarget { b, drift: gamma * b, distances: density_distances(&density, &target)? });
            }
            let min_l1 = targets.iter().map(|t| t.distances.l1).fold(f64::INFINITY, f64::min);
            (Some(roots), Some(targets), Some(min_l1))
        }
        _ => (None, None, None),
    };
    let summary = EulerSummary {
        header: w.header(),
        model: model_name(&config.model),
        n_steps: out.snapshots.last().map_or(0, |s| s.n),
        kill_count: out.kill_count,
        late_kill_rate: late_kill_rate(&out.snapshots),
        mean: out.measure.mean()[0],
        variance: out.measure.variance()[0],
        bandwidth: config.bandwidth(),
        roots,
        targets,
        min_l1,
    };
    let name = suffixed("summary", "json", tag);
    w.json(&name, &summary)
}

#[derive(Serialize)]
struct StartReport {
    start: Vec<f64>,
    report: OracleReport,
    fixed_point: Option<usize>,
}

#[derive(Serialize)]
struct OracleFile<'a> {
    header: &'a OutputHeader,
    options: FixedPointOptions,
    starts: Vec<StartReport>,
    fixed_points: Vec<Vec<f64>>,
    all_converged: bool,
}

pub(crate) fn oracle(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let config = &prepared.config;
    let family = config.model.finite_family()?;
    let starts = config.starts(family.state_count())?;
    let options = config.analysis().fixed_point.unwrap_or_default();
    let mut fixed_points: Vec<DiscreteMeasure> = Vec::new();
    let mut reports = Vec::new();
    for s in starts {
        let report = qsd_fixed_point(&*family, &s, &options)?;
        let fixed_point = if report.converged {
            match fixed_points.iter().position(|q| q.tv_distance(&report.qsd) <= DISTINCT_TOL) {
                Some(i) => Some(i),
                None => {
                    fixed_points.push(report.qsd.clone());
                    Some(fixed_points.len() - 1)
                }
            }
        } else {
            None
        };
        reports.push(StartReport { start: s.into_vec(), report, fixed_point });
    }
    let mut w = Writer::new(prepared);
    let file = OracleFile {
        header: w.header(),
        options,
        all_converged: reports.iter().all(|r| r.report.converged),
        starts: reports,
        fixed_points: fixed_points.into_iter().map(DiscreteMeasure::into_vec).collect(),
    };
    w.json("qsd.json", &file)?;
    Ok(w.written)
}

#[derive(Serialize)]
struct OdeStart {
    start: Vec<f64>,
    path_file: String,
    terminal: Vec<f64>,
    terminal_residual: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    time_change_deviation: Option<f64>,
}

#[derive(Serialize)]
struct OdeFile<'a> {
    header: &'a OutputHeader,
    t_end: f64,
    dt: f64,
    starts: Vec<OdeStart>,
}

pub(crate) fn ode(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let config = &prepared.config;
    let family = config.model.finite_family()?;
    let starts = config.starts(family.state_count())?;
    let analysis = config.analysis();
    let t_end = analysis.t_end.ok_or_else(|| Error::Config("analysis.t_end: required".into()))?;
    let dt = analysis.dt.ok_or_else(|| Error::Config("analysis.dt: required".into()))?;
    let equivalence = analysis.equivalence.unwrap_or(false);
    let many = starts.len() > 1;
    let mut w = Writer::new(prepared);
    let mut entries = Vec::new();
    for (i, s) in starts.into_iter().enumerate() {
        let path = integrate_qsd_ode(&*family, &s, t_end, dt)?;
        let name = if many { format!("path_{i}.csv") } else { "path.csv".to_string() };
        w.csv(&name, |f, h| write_path_csv(f, h, &path))?;
        let time_change_deviation =
            if equivalence { Some(check_time_change_equivalence(&*family, &s, t_end, dt)?) } else { None };
        entries.push(OdeStart {
            start: s.into_vec(),
            path_file: name,
            terminal: path.terminal().as_slice().to_vec(),
            terminal_residual: path.terminal_residual(),
            time_change_deviation,
        });
    }
    let file = OdeFile { header: w.header(), t_end, dt, starts: entries };
    w.json("ode.json", &file)?;
    Ok(w.written)
}

#[derive(Serialize)]
struct Outcome<T> {
    passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    value: Option<T>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

impl<T> Outcome<T> {
    fn from(result: Result<T>) -> Result<Self> {
        match result {
            Ok(v) => Ok(Self { passed: true, value: Some(v), error: None }),
            Err(e @ Error::Assumption { .. }) => Ok(Self { passed: false, value: None, error: Some(e.to_string()) }),
            Err(e) => Err(e),
        }
    }
}

#[derive(Serialize)]
struct AbsorptionBound {
    max_row_sum: f64,
    bound: f64,
    within_bound: bool,
}

#[derive(Serialize)]
struct AssumptionsFile<'a> {
    header: &'a OutputHeader,
    grid_size: usize,
    grid_seed: u64,
    h0: Outcome<H0Certificate>,
    absorption: Option<AbsorptionBound>,
    minorization: Outcome<Minorization>,
    lower_upper: Outcome<LowerUpper>,
}

pub(crate) fn check(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let config = &prepared.config;
    let family = config.model.finite_family()?;
    let m = family.state_count();
    let random = config.analysis().random_measures.unwrap_or(0);
    let grid = measure_grid(m, random, &mut seeded_rng(CHECK_SEED));
    let h0 = Outcome::from(check_h0(&*family, &grid, H0_MAX_POWER))?;
    let absorption = match &h0.value {
        Some(cert) => {
            let worst = max_absorption_time(&*family, &grid)?;
            let bound = cert.absorption_bound();
            Some(AbsorptionBound { max_row_sum: worst, bound, within_bound: worst <= bound * (1.0 + 1e-12) })
        }
        None => None,
    };
    let ell = h0.value.map_or(1, |c| c.ell);
    let minorization = Outcome::from(check_minorization(&*family, &grid, ell))?;
    let lower_upper = match &minorization.value {
        Some(minor) => Outcome::from(check_lower_upper(&*family, &grid, &minor.psi))?,
        None => Outcome { passed: false, value: None, error: Some("needs a minorizing measure".into()) },
    };
    let mut w = Writer::new(prepared);
    let file = AssumptionsFile {
        header: w.header(),
        grid_size: grid.len(),
        grid_seed: CHECK_SEED,
        h0,
        absorption,
        minorization,
        lower_upper,
    };
    w.json("assumptions.json", &file)?;
    Ok(w.written)
}

/// Roots of the benchmark fixed-point map together with both threshold values.
#[derive(Debug, Clone, Serialize)]
pub struct FixedPointSummary {
    pub gamma: f64,
    pub roots: Vec<f64>,
    pub root_count: usize,
    pub stated_threshold: f64,
    pub slope_threshold: f64,
    pub above_stated_threshold: bool,
    pub above_slope_threshold: bool,
}

impl FixedPointSummary {
    pub fn render(&self) -> String {
        let roots: Vec<String> = self.roots.iter().map(|r| format!("{r:.12}")).collect();
        format!(
            "gamma = {}\nroots ({}): {}\nstated threshold pi^2/(pi^2+8) = {:.12} (gamma above: {})\n\
             slope threshold pi^2/(pi^2-8) = {:.12} (gamma above: {})\n",
            self.gamma,
            self.root_count,
            roots.join(", "),
            self.stated_threshold,
            self.above_stated_threshold,
            self.slope_threshold,
            self.above_slope_threshold,
        )
    }
}

pub(crate) fn fixed_points(gamma: f64) -> Result<FixedPointSummary> {
    let roots = b_fixed_points(gamma).map_err(|e| Error::Config(format!("--gamma: {e}")))?;
    Ok(FixedPointSummary {
        gamma,
        root_count: roots.len(),
        roots,
        stated_threshold: stated_threshold(),
        slope_threshold: slope_threshold(),
        above_stated_threshold: gamma > stated_threshold(),
        above_slope_threshold: gamma > slope_threshold(),
    })
}

#[derive(Serialize)]
struct FixedPointsFile<'a> {
    header: &'a OutputHeader,
    #[serde(flatten)]
    summary: FixedPointSummary,
}

pub(crate) fn fixed_points_file(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let gamma = match prepared.config.model {
        ModelSpec::Benchmark { gamma, .. } => gamma,
        _ => return Err(Error::Config("model: fixed-points needs the benchmark model".into())),
    };
    let summary = fixed_points(gamma)?;
    print!("{}", summary.render());
    let mut w = Writer::new(prepared);
    let file = FixedPointsFile { header: w.header(), summary };
    w.json("fixed_points.json", &file)?;
    Ok(w.written)
}

#[derive(Serialize)]
struct SweepEntry {
    h: f64,
    n_steps: u64,
    replicas: usize,
    density_file: String,
    kill_count: u64,
}

#[derive(Serialize)]
struct SweepPair {
    h: f64,
    h_next: f64,
    w1: f64,
    l1: f64,
}

#[derive(Serialize)]
struct SweepFile<'a> {
    header: &'a OutputHeader,
    runs: Vec<SweepEntry>,
    pairs: Vec<SweepPair>,
    w1_decreasing: bool,
}

/// Step counts scaled so every run covers the same simulated time
/// `n_steps * max(h)`.
pub(crate) fn sweep_steps(n_steps: u64, h_values: &[f64]) -> Vec<u64> {
    let h_max = h_values.iter().copied().fold(0.0, f64::max);
    h_values.iter().map(|h| ((n_steps as f64) * h_max / h).round().max(1.0) as u64).collect()
}

/// Replicas run one after another with seeds `seed + r` and their KDEs are
/// averaged, so memory stays at one run.
pub(crate) fn hsweep(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    let config = &prepared.config;
    let mut h_values = config.analysis().h_values.ok_or_else(|| Error::Config("analysis.h_values: required".into()))?;
    h_values.sort_by(|a, b| b.total_cmp(a));
    let base = config.euler_run()?;
    let steps = sweep_steps(base.n_steps, &h_values);
    let mut w = Writer::new(prepared);
    let mut runs = Vec::new();
    let mut densities = Vec::new();
    let replicas = config.replicas();
    let grid = config.analysis().grid.ok_or_else(|| Error::Config("analysis.grid: required".into()))?;
    for (i, (&h, &n)) in h_values.iter().zip(&steps).enumerate() {
        let model = config.model.with_h(h)?.euler_model()?;
        let mut run_config = base.clone();
        run_config.n_steps = n;
        run_config.snapshot_every = base.snapshot_every.min(n);
        let mut values = vec![0.0; grid.points];
        let mut kill_count = 0;
        for r in 0..replicas {
            run_config.seed = base.seed.wrapping_add(r as u64);
            let out = qsd_core::driver::run(&model, &run_config)?;
            let density = euler_density(prepared, &out)?;
            for (v, x) in values.iter_mut().zip(&density.values) {
                *v += x / replicas as f64;
            }
            kill_count += out.kill_count;
        }
        let density = DensityOnGrid::new(grid, values)?;
        let name = format!("density_h{i}.csv");
        w.csv(&name, |f, hd| write_density_csv(f, hd, &density))?;
        runs.push(SweepEntry { h, n_steps: n, replicas, density_file: name, kill_count });
        densities.push(density);
    }
    let mut pairs = Vec::new();
    for i in 1..densities.len() {
        let d = density_distances(&densities[i - 1], &densities[i])?;
        pairs.push(SweepPair { h: h_values[i - 1], h_next: h_values[i], w1: d.w1, l1: d.l1 });
    }
    let w1_decreasing = pairs.windows(2).all(|p| p[1].w1 < p[0].w1);
    let file = SweepFile { header: w.header(), runs, pairs, w1_decreasing };
    w.json("hsweep.json", &file)?;
    Ok(w.written)
}
