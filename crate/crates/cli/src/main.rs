use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

mod output;
mod simulate;
mod train;
mod verify;

/// Euler–Lagrange minimization: simulate, train and verify.
#[derive(Parser, Debug)]
#[command(name = "elm", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario and write energy, L² and snapshot files.
    Simulate(SimulateArgs),
    /// Train an MLP density on plane-wave samples.
    Train(TrainArgs),
    /// Run a verification suite and print a pass/fail table.
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Default)]
pub struct SimulateArgs {
    /// Run file (TOML); command-line flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Preset name or path to a scenario TOML file.
    #[arg(long)]
    pub scenario: Option<String>,
    #[arg(long, value_enum)]
    pub method: Option<simulate::Method>,
    /// Replace the scenario density with a trained model file.
    #[arg(long)]
    pub density: Option<PathBuf>,
    #[arg(long)]
    pub dt: Option<f64>,
    /// Jacobi rounds per step.
    #[arg(long)]
    pub rounds: Option<usize>,
    /// Newton damping λ.
    #[arg(long)]
    pub damping: Option<f64>,
    #[arg(long)]
    pub horizon: Option<f64>,
    /// Relative and absolute tolerance for the adaptive method.
    #[arg(long)]
    pub tol: Option<f64>,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Simulated time between snapshots.
    #[arg(long)]
    pub snapshot_every: Option<f64>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training config (TOML); flags override its entries.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub samples: Option<usize>,
    /// 1 or 2.
    #[arg(long)]
    pub spatial_dim: Option<usize>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "model")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(value_enum)]
    pub suite: verify::Suite,
    /// Shorter horizon for the energy and interface suites.
    #[arg(long)]
    pub horizon: Option<f64>,
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ELM_THREADS") {
        let n: usize = v.parse().with_context(|| format!("ELM_THREADS must be a positive integer, got {v:?}"))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the worker pool")?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> Result<ExitCode> {
        configure_threads()?;
        match cli.command {
            Command::Simulate(args) => simulate::run(args),
            Command::Train(args) => train::run(args),
            Command::Verify(args) => verify::run(args),
        }
    };
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
