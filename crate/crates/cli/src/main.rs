mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use config::*;
use error::CliError;
use output::Run;

#[derive(Parser)]
#[command(name = "rot", version, about = "Regularized optimal transport with statistical inference")]
struct Cli {
    /// Directory for result files (created if missing).
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads for replicate loops; results do not depend on it.
    #[arg(long, global = true, env = "ROT_THREADS")]
    threads: Option<usize>,
    /// JSON settings (or a manifest of an earlier run) overriding the flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve for the regularized plan and the divergence.
    Solve(SolveConfig),
    /// Limit-law standard deviation of the divergence.
    Variance(VarianceConfig),
    /// Limit-law confidence interval for the divergence.
    Ci(CiConfig),
    /// Naive n-out-of-n bootstrap of the divergence.
    Bootstrap(BootstrapConfig),
    /// Monte Carlo study of the limit laws (settings from --config).
    Mc(McArgs),
    /// Colocalization curve of two images with a uniform band.
    Rcol(RcolConfig),
}

fn resolve<T>(flags: &T, cli: &Cli, run: &mut Run) -> Result<T, CliError>
where
    T: Serialize + DeserializeOwned + Finalize + Clone,
{
    let overrides = match &cli.config {
        Some(path) => config::read_config(path, run.subcommand, &mut run.inputs)?,
        None => Default::default(),
    };
    config::merge(flags, &overrides)
}

fn execute(cli: &Cli) -> Result<(), CliError> {
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::usage("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| CliError::usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Solve(flags) => {
            let mut run = Run::new("solve", &cli.out);
            let cfg = resolve(flags, cli, &mut run)?;
            commands::solve_cmd(&cfg, run)
        }
        Command::Variance(flags) => {
            let mut run = Run::new("variance", &cli.out);
            let cfg = resolve(flags, cli, &mut run)?;
            commands::variance_cmd(&cfg, run)
        }
        Command::Ci(flags) => {
            let mut run = Run::new("ci", &cli.out);
            let cfg = resolve(flags, cli, &mut run)?;
            commands::ci_cmd(&cfg, run)
        }
        Command::Bootstrap(flags) => {
            let mut run = Run::new("bootstrap", &cli.out);
            let cfg = resolve(flags, cli, &mut run)?;
            commands::bootstrap_cmd(&cfg, run)
        }
        Command::Mc(flags) => {
            let mut run = Run::new("mc", &cli.out);
            let overrides = match &cli.config {
                Some(path) => config::read_config(path, run.subcommand, &mut run.inputs)?,
                None => Default::default(),
            };
            if flags.seed.is_none() && !overrides.contains_key("seed") {
                return Err(CliError::usage("`mc` needs --seed (or \"seed\" in the config)"));
            }
            let mut base = rot_core::inference::McConfig::default();
            if let Some(seed) = flags.seed {
                base.seed = seed;
            }
            if let Some(reps) = flags.replicates {
                base.replicates = reps;
            }
            let cfg = config::merge(&base, &overrides)?;
            commands::mc_cmd(&cfg, run)
        }
        Command::Rcol(flags) => {
            let mut run = Run::new("rcol", &cli.out);
            let cfg = resolve(flags, cli, &mut run)?;
            commands::rcol_cmd(&cfg, run)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
