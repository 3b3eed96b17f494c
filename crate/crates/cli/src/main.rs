//! `loopsoup` command-line driver.
//!
//! Exit codes: 0 success, 1 configuration error, 2 guard violation (a
//! request beyond a documented limit), 3 runtime failure (IO, numerics,
//! interrupted run), 4 validation criterion failed.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use loopsoup::ErrorClass;

use crate::config::RunConfig;

#[derive(Parser, Debug)]
#[command(name = "loopsoup", version, about = "Random-walk loop soups on Z^d")]
pub struct Cli {
    /// TOML configuration file; unknown keys are rejected.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads; falls back to LOOPSOUP_WORKERS, then to all cores.
    #[arg(long, global = true, value_name = "N", env = "LOOPSOUP_WORKERS")]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Validation level.
    #[arg(long, global = true, value_name = "quick|full", default_value = "quick")]
    level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample soups in a box; writes `<out>/soup_<k>.loops` and `.json`.
    Sample,
    /// Cluster reports of sampled soups as JSON lines.
    Analyze,
    /// Exact loop-measure quantities as CSV.
    Exact,
    /// Green function values as CSV.
    Green,
    /// Run the configured experiment; CSV, slope sidecar, manifest, checkpoint.
    Experiment,
    /// Run the acceptance criteria.
    Validate {
        /// Restrict to these criterion ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
    /// Print the default configuration.
    Defaults,
}

#[derive(Debug)]
pub enum CliError {
    Config(String),
    Core(loopsoup::Error),
    Io(std::io::Error),
    Validation(Vec<u32>),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "{m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "io: {e}"),
            CliError::Validation(ids) => write!(f, "criteria failed: {ids:?}"),
        }
    }
}

impl From<loopsoup::Error> for CliError {
    fn from(e: loopsoup::Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Core(e) => match e.class() {
                ErrorClass::Config => 1,
                ErrorClass::Guard => 2,
                ErrorClass::Runtime => 3,
            },
            CliError::Io(_) => 3,
            CliError::Validation(_) => 4,
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
        cfg.experiment.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    if cfg.workers > 0 {
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cfg.workers).build_global();
    }
    let level = cli.level.parse().map_err(|e: loopsoup::Error| CliError::Config(e.to_string()))?;
    match cli.command {
        Command::Sample => commands::sample(&cfg),
        Command::Analyze => commands::analyze(&cfg),
        Command::Exact => commands::exact(&cfg),
        Command::Green => commands::green(&cfg),
        Command::Experiment => commands::experiment(&cfg),
        Command::Validate { only } => commands::validate(&cfg, level, cli.seed, &only),
        Command::Defaults => {
            print!("{}", RunConfig::default().to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("loopsoup: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
