//! On-disk formats.
//!
//! Series are CSV with a first comment line `# {header json}`. Final measures
//! are JSON (`states`, `weights`) or a binary particle dump:
//!
//! ```text
//! offset  size        field
//! 0       8           magic "QSDPART1"
//! 8       4           format version (u32, currently 1)
//! 12      4           dimension d (u32, 1..=1024)
//! 16      8           particle count n (u64)
//! 24      8           log scale (f64): true weight = stored weight * exp(log scale)
//! 32      n*(d+1)*8   per particle: d coordinates then the stored weight (f64)
//! ```
//!
//! All integers and floats are little-endian.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analysis::DensityOnGrid;
use crate::driver::Snapshot;
use crate::measure::WeightedEmpiricalMeasure;
use crate::ode::OdePath;
use crate::{Error, Result};

pub const PARTICLE_MAGIC: &[u8; 8] = b"QSDPART1";
pub const PARTICLE_VERSION: u32 = 1;
const MAX_DIM: u32 = 1024;
const HEADER_LEN: usize = 32;

/// Provenance block attached to every output file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputHeader {
    pub config_sha256: String,
    pub seed: u64,
    pub version: String,
}

fn header_line<W: Write>(out: &mut W, header: &OutputHeader) -> Result<()> {
    let json = serde_json::to_string(header).map_err(|e| Error::Decode(e.to_string()))?;
    writeln!(out, "# {json}")?;
    Ok(())
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Columns `n,gamma,kills_cum,mean,var,lyapunov,hist_0..hist_{B-1}`.
pub fn write_snapshots_csv<W: Write>(out: &mut W, header: &OutputHeader, snapshots: &[Snapshot]) -> Result<()> {
    header_line(out, header)?;
    let bins = snapshots.first().map_or(0, |s| s.histogram.len());
    write!(out, "n,gamma,kills_cum,mean,var,lyapunov")?;
    for b in 0..bins {
        write!(out, ",hist_{b}")?;
    }
    writeln!(out)?;
    for s in snapshots {
        write!(out, "{},{},{},{},{},{}", s.n, s.gamma_n, s.kill_count, s.mean, s.variance, opt(s.lyapunov))?;
        for h in &s.histogram {
            write!(out, ",{h}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Columns `time,p_0..p_{m-1},residual,tau`.
pub fn write_path_csv<W: Write>(out: &mut W, header: &OutputHeader, path: &OdePath) -> Result<()> {
    header_line(out, header)?;
    let m = path.values.first().map_or(0, |v| v.len());
    write!(out, "time")?;
    for j in 0..m {
        write!(out, ",p_{j}")?;
    }
    writeln!(out, ",residual,tau")?;
    for (k, v) in path.values.iter().enumerate() {
        write!(out, "{}", path.times[k])?;
        for p in v.as_slice() {
            write!(out, ",{p}")?;
        }
        let tau = path.tau.as_ref().map(|t| t[k]);
        writeln!(out, ",{},{}", path.residuals[k], opt(tau))?;
    }
    Ok(())
}

/// Two columns `x,f`.
pub fn write_density_csv<W: Write>(out: &mut W, header: &OutputHeader, density: &DensityOnGrid) -> Result<()> {
    header_line(out, header)?;
    writeln!(out, "x,f")?;
    for (x, f) in density.grid.xs().iter().zip(&density.values) {
        writeln!(out, "{x},{f}")?;
    }
    Ok(())
}

/// A probability vector on labelled states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasureJson {
    #[serde(default)]
    pub header: Option<OutputHeader>,
    pub states: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MeasureJson {
    pub fn validate(&self) -> Result<()> {
        if self.states.len() != self.weights.len() {
            return Err(Error::Decode("states and weights differ in length".into()));
        }
        if self.states.is_empty() {
            return Err(Error::Decode("measure has no states".into()));
        }
        if self.states.iter().any(|s| !s.is_finite()) {
            return Err(Error::Decode("state labels must be finite".into()));
        }
        if self.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Decode("weights must be finite and nonnegative".into()));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Decode(format!("weights sum to {total}, expected 1")));
        }
        Ok(())
    }
}

pub fn encode_measure_json(measure: &MeasureJson) -> Result<String> {
    measure.validate()?;
    serde_json::to_string_pretty(measure).map_err(|e| Error::Decode(e.to_string()))
}

pub fn decode_measure_json(bytes: &[u8]) -> Result<MeasureJson> {
    let m: MeasureJson = serde_json::from_slice(bytes).map_err(|e| Error::Decode(e.to_string()))?;
    m.validate()?;
    Ok(m)
}

/// Decoded contents of a particle dump.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleDump {
    pub dim: usize,
    pub log_scale: f64,
    /// Row-major coordinates, `dim` per particle.
    pub coordinates: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ParticleDump {
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    /// Rebuilds the weighted measure; fails if the dimension differs from `D`.
    pub fn into_measure<const D: usize>(self) -> Result<WeightedEmpiricalMeasure<[f64; D]>> {
        if self.dim != D {
            return Err(Error::Decode(format!("dump has dimension {}, expected {D}", self.dim)));
        }
        let points = self
            .coordinates
            .chunks_exact(D)
            .map(|c| {
                let mut p = [0.0; D];
                p.copy_from_slice(c);
                p
            })
            .collect();
        WeightedEmpiricalMeasure::from_parts(points, self.weights, self.log_scale)
            .map_err(|e| Error::Decode(e.to_string()))
    }
}

pub fn encode_particles<const D: usize>(measure: &WeightedEmpiricalMeasure<[f64; D]>) -> Vec<u8> {
    let n = measure.len();
    let mut out = Vec::with_capacity(HEADER_LEN + n * (D + 1) * 8);
    out.extend_from_slice(PARTICLE_MAGIC);
    out.extend_from_slice(&PARTICLE_VERSION.to_le_bytes());
    out.extend_from_slice(&(D as u32).to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&measure.log_scale().to_le_bytes());
    for (p, w) in measure.points().iter().zip(measure.stored_weights()) {
        for c in p {
            out.extend_from_slice(&c.to_le_bytes());
        }
        out.extend_from_slice(&w.to_le_bytes());
    }
    out
}

fn read_f64(bytes: &[u8], at: usize) -> f64 {
    f64::from_le_bytes(bytes[at..at + 8].try_into().expect("slice of length 8"))
}

pub fn decode_particles(bytes: &[u8]) -> Result<ParticleDump> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::Decode(format!("dump is {} bytes, shorter than the header", bytes.len())));
    }
    if &bytes[..8] != PARTICLE_MAGIC {
        return Err(Error::Decode("bad magic; not a particle dump".into()));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != PARTICLE_VERSION {
        return Err(Error::Decode(format!("unsupported dump version {version}")));
    }
    let dim = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes"));
    if dim == 0 || dim > MAX_DIM {
        return Err(Error::Decode(format!("dimension {dim} out of range 1..={MAX_DIM}")));
    }
    let count = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes"));
    let log_scale = read_f64(bytes, 24);
    if !log_scale.is_finite() {
        return Err(Error::Decode("log scale is not finite".into()));
    }
    let record = (dim as usize + 1) * 8;
    let body = bytes.len() - HEADER_LEN;
    let expected = usize::try_from(count).ok().and_then(|c| c.checked_mul(record));
    if expected != Some(body) {
        return Err(Error::Decode(format!("body is {body} bytes, header announces {count} particles of {record} bytes")));
    }
    let dim = dim as usize;
    let count = count as usize;
    let mut coordinates = Vec::with_capacity(count * dim);
    let mut weights = Vec::with_capacity(count);
    for k in 0..count {
        let base = HEADER_LEN + k * record;
        for i in 0..dim {
            let c = read_f64(bytes, base + 8 * i);
            if !c.is_finite() {
                return Err(Error::Decode(format!("particle {k} has a non-finite coordinate")));
            }
            coordinates.push(c);
        }
        let w = read_f64(bytes, base + 8 * dim);
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Decode(format!("particle {k} has invalid weight {w}")));
        }
        weights.push(w);
    }
    Ok(ParticleDump { dim, log_scale, coordinates, weights })
}
