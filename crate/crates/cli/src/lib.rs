//! Config-driven experiment runner for `schauder-core`.
//!
//! Each subcommand runs one pipeline, collects a JSON summary (with the
//! thresholds it applied) and a table of samples, and only touches the output
//! directory once the whole pipeline has finished.

pub mod config;
mod pipelines;

use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

pub use config::ExperimentConfig;

/// Version tag written into the CSV header comment; bump when columns change.
pub const SAMPLES_FORMAT: &str = "schauder-samples/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Exponents,
    Reconstruct,
    Schauder,
    Multilevel,
    KernelCheck,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Exponents => "exponents",
            Subcommand::Reconstruct => "reconstruct",
            Subcommand::Schauder => "schauder",
            Subcommand::Multilevel => "multilevel",
            Subcommand::KernelCheck => "kernel-check",
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    /// Unreadable or malformed configuration.
    Config(String),
    /// A numerical operation failed.
    Core(schauder_core::Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use schauder_core::Error as E;
        match self {
            CliError::Config(_) => 2,
            CliError::Core(E::Rejected(_) | E::InvalidInput(_) | E::OrderMismatch { .. }) => 3,
            CliError::Core(E::NonConvergent(_) | E::DivergenceSuspected(_) | E::SingularMoments(_)) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<schauder_core::Error> for CliError {
    fn from(e: schauder_core::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

/// Fixed-column sample table.
#[derive(Debug, Clone)]
pub struct Samples {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl Samples {
    pub fn new(columns: &[&'static str]) -> Self {
        Samples { columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    fn to_csv(&self, sub: Subcommand) -> Result<Vec<u8>, CliError> {
        let mut out = Vec::new();
        writeln!(out, "# {SAMPLES_FORMAT} {}: {}", sub.name(), self.columns.join(","))?;
        {
            let mut w = csv::Writer::from_writer(&mut out);
            w.write_record(&self.columns).map_err(csv_err)?;
            for r in &self.rows {
                w.write_record(r).map_err(csv_err)?;
            }
            w.flush()?;
        }
        Ok(out)
    }
}

fn csv_err(e: csv::Error) -> CliError {
    CliError::Io(std::io::Error::other(e))
}

/// Result of a pipeline before it is written out.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub thresholds: Value,
    pub results: Value,
    pub samples: Samples,
}

/// Runs a pipeline and returns the summary document and the samples.
pub fn run(cfg: &ExperimentConfig, sub: Subcommand) -> Result<(Value, Samples, bool), CliError> {
    log::info!("running {} on a {:?} fixture", sub.name(), cfg.fixture.kind);
    let outcome = match sub {
        Subcommand::Exponents => pipelines::exponents(cfg)?,
        Subcommand::Reconstruct => pipelines::reconstruct(cfg)?,
        Subcommand::Schauder => pipelines::schauder(cfg)?,
        Subcommand::Multilevel => pipelines::multilevel(cfg)?,
        Subcommand::KernelCheck => pipelines::kernel_check(cfg)?,
    };
    let summary = json!({
        "format": SAMPLES_FORMAT,
        "subcommand": sub.name(),
        "seed": cfg.seed,
        "pass": outcome.pass,
        "thresholds": outcome.thresholds,
        "results": outcome.results,
        "config": cfg,
    });
    Ok((summary, outcome.samples, outcome.pass))
}

/// Writes `summary.json` and `samples.csv` into `dir`. Both files are staged
/// under temporary names and renamed only once both are complete.
pub fn write_outputs(dir: &Path, sub: Subcommand, summary: &Value, samples: &Samples) -> Result<(), CliError> {
    let json = serde_json::to_vec_pretty(summary).map_err(|e| CliError::Io(std::io::Error::other(e)))?;
    let csv = samples.to_csv(sub)?;
    std::fs::create_dir_all(dir)?;
    let staged = [("summary.json", json), ("samples.csv", csv)];
    for (name, bytes) in &staged {
        std::fs::write(dir.join(format!(".{name}.partial")), bytes)?;
    }
    for (name, _) in &staged {
        std::fs::rename(dir.join(format!(".{name}.partial")), dir.join(name))?;
    }
    Ok(())
}

/// Compact numeric formatting shared by all CSV columns.
pub(crate) fn num(v: f64) -> String {
    format!("{v:e}")
}
