use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use schauder_cli::{run, write_outputs, CliError, ExperimentConfig, Subcommand};

/// Runs a germ/kernel experiment and writes `summary.json` and `samples.csv`.
///
/// Exit status: 0 when every threshold is met, 1 when a threshold is missed
/// (or on I/O failure), 2 for configuration errors, 3 for admissibility
/// rejections, 4 when a limiting procedure does not converge.
#[derive(Debug, Parser)]
#[command(name = "schauder", version)]
struct Args {
    #[arg(value_enum)]
    subcommand: Subcommand,
    /// TOML experiment definition; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output.dir`; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomly placed probes (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for the parallel sweeps.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long)]
    verbose: bool,
}

fn execute(args: &Args) -> Result<bool, CliError> {
    let mut cfg = match &args.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let dir = args.out.clone().or_else(|| cfg.output.dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let (summary, samples, pass) = run(&cfg, args.subcommand)?;
    write_outputs(&dir, args.subcommand, &summary, &samples)?;
    log::info!("wrote {} ({} samples), pass = {pass}", dir.display(), samples.rows.len());
    Ok(pass)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let level = if args.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("{}: thresholds not met (see summary.json)", args.subcommand.name());
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
