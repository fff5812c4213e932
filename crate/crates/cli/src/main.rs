//! `kslab`: runs evolution, steady-state, sweep and supersolution experiments
//! from a JSON configuration and writes plot-ready CSV plus JSON sidecars.

mod branch;
mod config;
mod evolve;
mod output;
mod supersolution;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use kslab_core::KsError;

#[derive(Parser)]
#[command(name = "kslab", version, about = "Radial Keller-Segel laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[arg(long, short, global = true)]
    verbose: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Integrate one initial datum and classify it.
    Evolve,
    /// Trace steady-state branches in the (m, Lambda) plane.
    Branch,
    /// Classify a grid of masses for several initial shapes.
    Sweep,
    /// Build and check the stationary supersolution.
    Supersolution,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Evolve => "evolve",
            Command::Branch => "branch",
            Command::Sweep => "sweep",
            Command::Supersolution => "supersolution",
        }
    }
}

/// Failure classes with their exit codes.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Solver(anyhow::Error),
    Infeasible(anyhow::Error),
    Io(anyhow::Error),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Solver(_) => 3,
            Failure::Infeasible(_) => 4,
            Failure::Io(_) => 1,
        }
    }

    fn error(&self) -> &anyhow::Error {
        match self {
            Failure::Config(e) | Failure::Solver(e) | Failure::Infeasible(e) | Failure::Io(e) => e,
        }
    }
}

impl From<KsError> for Failure {
    fn from(e: KsError) -> Self {
        match e {
            KsError::InvalidArgument(_) | KsError::NegativeInput { .. } => Failure::Config(e.into()),
            KsError::Construction(_) => Failure::Infeasible(e.into()),
            _ => Failure::Solver(e.into()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.into())
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Io(e.into())
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

fn run(cli: &Cli) -> Outcome<()> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| Failure::Config(anyhow::anyhow!("--config PATH is required")))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(anyhow::anyhow!("cannot read {}: {e}", path.display())))?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Failure::Config(anyhow::anyhow!("--jobs must be at least 1")));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Failure::Solver(e.into()))?;
    }
    std::fs::create_dir_all(&cli.out)?;
    let meta = output::Meta::start(cli.command.name(), &text, rayon::current_num_threads());
    match cli.command {
        Command::Evolve => evolve::run(&config::parse(&text)?, &cli.out, meta),
        Command::Branch => branch::run(&config::parse(&text)?, &cli.out, meta),
        Command::Sweep => sweep::run(&config::parse(&text)?, &cli.out, meta),
        Command::Supersolution => supersolution::run(&config::parse(&text)?, &cli.out, meta),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.verbose { "debug" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
