//! `steadyent`: run configs and the figure presets.

mod commands;
mod config;
mod output;
mod reproduce;
mod svg;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;
use crate::output::{json_string, OutputDir};
use crate::reproduce::Figure;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("{0}")]
    Core(#[from] steadyent::Error),
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Core(steadyent::Error::Invalid(_)) => 2,
            CliError::Core(steadyent::Error::Numerical(_)) => 3,
            CliError::Core(steadyent::Error::Invariant(_)) => 4,
            CliError::Io { .. } => 1,
        }
    }
}

#[derive(Parser)]
#[command(name = "steadyent", version, about = "Steady-state entanglement of two atoms in distant cavities")]
struct Cli {
    /// TOML config (JSON when the file ends in .json).
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Worker threads for sweeps [default: number of processors].
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Seed for random initial states and optimizer restarts; overrides the config.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Output directory; overrides `run.output_dir`.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate the master equation and write the population trajectory.
    Evolve,
    /// Solve for the steady state; writes steady.json.
    Steady,
    /// Reduce to the 4-level model; writes closed-form and numeric rates.
    Effective,
    /// Closed-form effective rates (one resonant mediating mode only).
    Rates,
    /// Grid sweep from the [sweep] section.
    Sweep,
    /// 1/C fit from the [fit] section.
    Fit,
    /// Rerun one figure with its embedded preset.
    Reproduce {
        #[arg(value_enum)]
        figure: Figure,
    },
}

impl Command {
    fn name(self) -> String {
        match self {
            Command::Evolve => "evolve".into(),
            Command::Steady => "steady".into(),
            Command::Effective => "effective".into(),
            Command::Rates => "rates".into(),
            Command::Sweep => "sweep".into(),
            Command::Fit => "fit".into(),
            Command::Reproduce { figure } => format!("reproduce {}", figure.name()),
        }
    }
}

#[derive(Serialize)]
struct Versions {
    steadyent: &'static str,
    steadyent_cli: &'static str,
}

#[derive(Serialize)]
struct Metadata<'a> {
    command: String,
    seed: u64,
    jobs: usize,
    versions: Versions,
    config: &'a RunConfig,
    notes: Vec<String>,
    warnings: Vec<String>,
    files: Vec<String>,
    wall_time_seconds: f64,
}

fn default_jobs() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    let start = Instant::now();
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::config("jobs: must be at least 1")),
        Some(n) => n,
        None => default_jobs(),
    };
    let (cfg, notes) = match cli.command {
        Command::Reproduce { figure } => (figure.preset(cli.seed.unwrap_or(0)), figure.notes()),
        _ => {
            let path = cli
                .config
                .as_ref()
                .ok_or_else(|| CliError::config("config: --config PATH is required for this subcommand"))?;
            (RunConfig::load(path)?.resolve(cli.seed)?, Vec::new())
        }
    };
    let warnings = cfg.validate()?;
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let dir = cli.out.clone().unwrap_or_else(|| cfg.run.output_dir.clone());
    let mut out = OutputDir::create(&dir, &cfg.run.emit)?;
    let mut failed_checks = 0;
    match cli.command {
        Command::Evolve => commands::evolve(&cfg, &mut out)?,
        Command::Steady => commands::steady(&cfg, &mut out)?,
        Command::Effective => commands::effective(&cfg, &mut out)?,
        Command::Rates => commands::rates(&cfg, &mut out)?,
        Command::Sweep => commands::sweep(&cfg, &mut out, jobs)?,
        Command::Fit => commands::fit(&cfg, &mut out)?,
        Command::Reproduce { figure } => {
            let checks = reproduce::run(figure, cfg.run.seed, jobs, &mut out)?;
            for c in &checks {
                println!("{}", c.line());
            }
            failed_checks = checks.iter().filter(|c| c.passed == Some(false)).count();
        }
    }
    out.always("config.toml", &cfg.to_toml())?;
    let files = out.written().to_vec();
    let meta = Metadata {
        command: cli.command.name(),
        seed: cfg.run.seed,
        jobs,
        versions: Versions { steadyent: steadyent::VERSION, steadyent_cli: env!("CARGO_PKG_VERSION") },
        config: &cfg,
        notes,
        warnings,
        files,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    };
    out.always("metadata.json", &json_string(&meta))?;
    if failed_checks > 0 {
        println!("{failed_checks} check(s) failed; see {}", out.path().join("checks.json").display());
    }
    println!("wrote {}", out.path().display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
