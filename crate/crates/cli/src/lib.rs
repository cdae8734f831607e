//! Command-line driver: reads an experiment document, runs it, and writes
//! deterministic output files.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use qsd_core::config::{Command, ExperimentConfig};
use qsd_core::io::OutputHeader;
use qsd_core::{Error, Result};

mod commands;

pub use commands::FixedPointSummary;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "qsd", version, about = "Self-interacting approximation of quasi-stationary distributions")]
#[command(args_conflicts_with_subcommands = true)]
pub struct Cli {
    #[command(subcommand)]
    pub action: Option<Action>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment document (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides `run.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Overrides `output.dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Overrides `run.replicas`.
    #[arg(long)]
    pub replicas: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Action {
    /// Prints the roots of the interval benchmark's fixed-point map.
    FixedPoints {
        #[arg(long)]
        gamma: f64,
    },
}

/// Effective configuration after command-line overrides.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub out_dir: PathBuf,
    pub header: OutputHeader,
}

pub fn version_string() -> String {
    format!("v{}", env!("CARGO_PKG_VERSION"))
}

/// Parses the document, applies overrides and computes the output header.
/// The hash covers the effective document except `output.dir`.
pub fn prepare(text: &str, args: &RunArgs) -> Result<Prepared> {
    let mut config = ExperimentConfig::from_json_str(text)?;
    if let Some(seed) = args.seed {
        match config.run.as_mut() {
            Some(run) => run.seed = seed,
            None => return Err(Error::Config("--seed: this command has no run section".into())),
        }
    }
    if let Some(r) = args.replicas {
        match config.run.as_mut() {
            Some(run) => run.replicas = Some(r),
            None => return Err(Error::Config("--replicas: this command has no run section".into())),
        }
    }
    if let Some(out) = &args.out {
        config.output.dir = out.to_string_lossy().into_owned();
    }
    config.validate()?;
    let mut hashed = config.clone();
    hashed.output.dir.clear();
    let canonical = serde_json::to_vec(&hashed).map_err(|e| Error::Config(e.to_string()))?;
    let header = OutputHeader {
        config_sha256: hex::encode(Sha256::digest(&canonical)),
        seed: config.run.as_ref().map_or(0, |r| r.seed),
        version: version_string(),
    };
    Ok(Prepared { out_dir: PathBuf::from(&config.output.dir), config, header })
}

/// Runs a prepared experiment, returning the files written.
pub fn execute(prepared: &Prepared) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(&prepared.out_dir)?;
    match prepared.config.command {
        Command::Simulate => commands::simulate(prepared),
        Command::Oracle => commands::oracle(prepared),
        Command::Ode => commands::ode(prepared),
        Command::Check => commands::check(prepared),
        Command::FixedPoints => commands::fixed_points_file(prepared),
        Command::Hsweep => commands::hsweep(prepared),
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Decode(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn exit_code(e: &Error) -> i32 {
    if e.is_config() {
        EXIT_CONFIG
    } else {
        EXIT_FAILURE
    }
}

/// Entry point shared by the binary and the tests.
pub fn main_with(cli: Cli) -> i32 {
    if let Some(Action::FixedPoints { gamma }) = cli.action {
        return match commands::fixed_points(gamma) {
            Ok(summary) => {
                print!("{}", summary.render());
                EXIT_OK
            }
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_CONFIG
            }
        };
    }
    let Some(path) = cli.run.config.as_ref() else {
        eprintln!("error: --config <path> is required (or use the fixed-points subcommand)");
        return EXIT_CONFIG;
    };
    let text = match fs::read_to_string(path) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", path.display());
            return EXIT_CONFIG;
        }
    };
    let prepared = match prepare(&text, &cli.run) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {}: {e}", path.display());
            return exit_code(&e);
        }
    };
    match execute(&prepared) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
