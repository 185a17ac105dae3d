//! Command-line front end for streaming spatio-temporal GP regression.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use stgp::cli::{
    cmd_approx_psd, cmd_compare, cmd_generate, cmd_run, cmd_sweep, exit_code_for, CommandReport,
};
use stgp::config::ExperimentConfig;
use stgp::Result;

#[derive(Parser)]
#[command(
    name = "stgp",
    version,
    about = "Streaming spatio-temporal Gaussian process regression",
    long_about = "Generates synthetic space-time datasets, runs streaming Kalman-filter \
                  regression (plus adaptive-set and windowed-batch variants) over them, sweeps \
                  hyperparameter likelihood surfaces, and emits plot-ready CSV/JSON outputs."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// Experiment configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's `output`, then `.`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the config's mode (filter | adaptive | baseline | sweep).
    #[arg(long)]
    mode: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a dataset (or adaptive scenario) from the config.
    Generate(RunArgs),
    /// Run the configured estimator over generated or provided data.
    Run(RunArgs),
    /// Evaluate the likelihood over a hyperparameter grid, in parallel.
    Sweep(RunArgs),
    /// Fit a rational spectral density and write the fitted factor.
    ApproxPsd(RunArgs),
    /// Score trajectory files against a reference trajectory.
    Compare {
        /// Reference trajectory (JSON lines).
        #[arg(long)]
        reference: PathBuf,
        /// Trajectories to score.
        #[arg(required = true)]
        trajectories: Vec<PathBuf>,
        /// Output directory for the fit table.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn effective_config(args: &RunArgs) -> Result<(ExperimentConfig, PathBuf)> {
    let mut config = ExperimentConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(mode) = &args.mode {
        config.mode = mode.parse()?;
    }
    config.validate()?;
    let out = args
        .out
        .clone()
        .or_else(|| config.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    Ok((config, out))
}

fn dispatch(command: &Command) -> Result<CommandReport> {
    match command {
        Command::Generate(args) => {
            let (config, out) = effective_config(args)?;
            cmd_generate(&config, &out)
        }
        Command::Run(args) => {
            let (config, out) = effective_config(args)?;
            cmd_run(&config, &out)
        }
        Command::Sweep(args) => {
            let (config, out) = effective_config(args)?;
            cmd_sweep(&config, &out)
        }
        Command::ApproxPsd(args) => {
            let (config, out) = effective_config(args)?;
            cmd_approx_psd(&config, &out)
        }
        Command::Compare { reference, trajectories, out } => {
            let out = out.clone().unwrap_or_else(|| PathBuf::from("."));
            cmd_compare(reference, trajectories, &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli.command) {
        Ok(report) => {
            for warning in &report.warnings {
                eprintln!("warning: {warning}");
            }
            for line in &report.summary {
                println!("{line}");
            }
            for path in &report.outputs {
                println!("wrote {}", path.display());
            }
            ExitCode::SUCCESS
        }
        Err(error) => {
            eprintln!("error: {error}");
            ExitCode::from(exit_code_for(&error) as u8)
        }
    }
}
