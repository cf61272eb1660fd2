//! Command-line orchestration for the low Mach laboratory.

pub mod config;
pub mod error;
pub mod experiments;
pub mod fit;
pub mod identities;
pub mod output;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::config::{config_reference, ExperimentConfig};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lowmach", version, about = "Low Mach radiation hydrodynamics experiments")]
pub struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides output.dir).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    /// Worker threads for sweeps.
    #[arg(long, global = true, value_name = "K")]
    pub threads: Option<usize>,
    /// Seed override for every random generator.
    #[arg(long, global = true, value_name = "S")]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// One compressible run with diagnostics and an optional reference.
    Run,
    /// δ-sweep with a shared incompressible reference and rate fits.
    Sweep,
    /// Incompressible reference run.
    Reference,
    /// Algebraic identity suite.
    VerifyIdentities,
    /// Linearized estimate probe across δ and coefficient families.
    Linearized,
    /// Log-log slope of `delta,value` pairs read from a CSV file.
    Fit {
        #[arg(value_name = "FILE")]
        input: PathBuf,
    },
    /// Print the annotated default configuration.
    ConfigReference,
}

fn load(cli: &Cli, required: bool) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) if required => ExperimentConfig::load(p)?,
        Some(p) => ExperimentConfig::load_lenient(p)?,
        None if required => return Err(CliError::Usage("--config PATH is required for this command".into())),
        None => ExperimentConfig::with_required(0.5, 0.5),
    };
    if let Some(s) = cli.seed {
        cfg.apply_seed(s);
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
    }
    Ok(cfg)
}

fn out_dir(cli: &Cli, cfg: &ExperimentConfig) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<(), CliError> {
    let s = serde_json::to_string_pretty(v).map_err(|e| CliError::Failed(format!("json: {e}")))?;
    println!("{s}");
    Ok(())
}

/// Runs a parsed command; `Ok` carries the process exit code.
pub fn execute(cli: &Cli) -> Result<i32, CliError> {
    match &cli.command {
        Command::ConfigReference => {
            print!("{}", config_reference());
            Ok(0)
        }
        Command::Fit { input } => {
            let text = std::fs::read_to_string(input).map_err(|e| CliError::io(input, e))?;
            let pts = fit::parse_points(&text)?;
            print_json(&fit::fit_rate(&pts)?)?;
            Ok(0)
        }
        Command::VerifyIdentities => {
            let cfg = load(cli, false)?;
            let report = identities::verify_identities(&cfg)?;
            if let Some(dir) = &cli.out {
                output::ensure_dir(dir)?;
                output::write_json(&dir.join("identities.json"), &report)?;
            }
            print_json(&report)?;
            if report.passed {
                Ok(0)
            } else {
                Err(CliError::Failed(format!("identities failed: {}", report.failures().join(", "))))
            }
        }
        Command::Linearized => {
            let cfg = load(cli, false)?;
            let report = experiments::run_linearized(&cfg, &out_dir(cli, &cfg), cli.threads)?;
            print_json(&report)?;
            Ok(0)
        }
        Command::Run => {
            let cfg = load(cli, true)?;
            let report = experiments::run_single(&cfg, &out_dir(cli, &cfg))?;
            match &report.member.abort {
                None => Ok(0),
                Some(a) => Err(CliError::Failed(format!(
                    "run aborted after t = {}: {a}",
                    report.member.last_valid_time
                ))),
            }
        }
        Command::Sweep => {
            let cfg = load(cli, true)?;
            let report = experiments::run_sweep(&cfg, &out_dir(cli, &cfg), cli.threads)?;
            if report.complete {
                Ok(0)
            } else {
                Err(CliError::Failed("sweep incomplete: at least one member run aborted".into()))
            }
        }
        Command::Reference => {
            let cfg = load(cli, true)?;
            let report = experiments::run_reference_cmd(&cfg, &out_dir(cli, &cfg))?;
            print_json(&report)?;
            Ok(0)
        }
    }
}
