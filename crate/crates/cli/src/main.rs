use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use leafcycle_cli::config::ExperimentConfig;
use leafcycle_cli::runner::{self, RunOptions, Status};

#[derive(Parser)]
#[command(
    name = "leafcycle",
    version,
    about = "Limit cycles of perturbed Nambu systems on symplectic leaves"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample the Melnikov function and locate its zeros.
    Melnikov(Common),
    /// Continue predicted cycles of the perturbed flow for each epsilon.
    Hunt(Common),
    /// Run the numerical identity checks.
    Verify(Common),
    /// Tabulate the generalized Jacobi elliptic functions.
    Jacobi(Common),
}

#[derive(Args)]
struct Common {
    /// Experiment configuration (JSON). Defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// RNG seed; overrides `seed` from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 picks the number of cores).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Print the effective configuration and exit.
    #[arg(long)]
    dump_config: bool,
}

fn run(cli: Cli) -> Result<Status> {
    let (common, pipeline): (
        &Common,
        fn(&ExperimentConfig, &RunOptions) -> Result<Status>,
    ) = match &cli.command {
        Command::Melnikov(c) => (c, runner::run_melnikov),
        Command::Hunt(c) => (c, runner::run_hunt),
        Command::Verify(c) => (c, runner::run_verify),
        Command::Jacobi(c) => (c, runner::run_jacobi),
    };
    let mut cfg = match &common.config {
        Some(path) => {
            ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &common.out {
        cfg.output_dir = out.display().to_string();
    }
    if common.dump_config {
        println!("{}", cfg.to_json());
        return Ok(Status::Success);
    }
    runner::preflight(&cfg)?;
    let opts = RunOptions {
        out: PathBuf::from(&cfg.output_dir),
        seed: cfg.seed,
        threads: common.threads,
    };
    pipeline(&cfg, &opts)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(status) => ExitCode::from(status.exit_code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
