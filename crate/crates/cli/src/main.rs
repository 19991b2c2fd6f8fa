//! `boltzgen` — train, sample, and evaluate a conditional Boltzmann
//! generator for molecular conformations.
//!
//! Exit codes: 0 success, 1 usage/configuration error, 2 data error,
//! 3 numerical failure.

use boltzgen::commands::{
    cmd_eval_boltzmann, cmd_finetune, cmd_gradcheck, cmd_inspect, cmd_pretrain, cmd_sample,
    RunOpts,
};
use boltzgen::config::load_config;
use boltzgen::error::Result;
use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;

#[derive(Parser)]
#[command(
    name = "boltzgen",
    version,
    about = "Conditional Boltzmann generator for molecular conformations"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train the conditional denoiser on a conformer dataset.
    Pretrain(RunArgs),
    /// Fine-tune a regression head on labeled records.
    Finetune(RunArgs),
    /// Generate conformations conditioned on one molecule.
    Sample(RunArgs),
    /// Compare generated ensembles against an MCMC oracle of a toy
    /// potential.
    EvalBoltzmann(RunArgs),
    /// Verify autodiff gradients of the full loss by central differences.
    Gradcheck {
        /// Optional run config; only its train.seed is used.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Seed for the probe model and noise draw (overrides the config).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print a checkpoint's configuration and tensor manifest.
    Inspect {
        /// Checkpoint file to describe.
        path: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override train.seed from the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for batch evaluation (default 1; results differ only
    /// in floating-point rounding order, never in content).
    #[arg(long, default_value_t = 1)]
    threads: usize,
    /// Override data.out_dir from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn opts(&self) -> RunOpts<'_> {
        RunOpts {
            config: &self.config,
            seed: self.seed,
            threads: self.threads,
            out: self.out.as_deref(),
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Pretrain(args) => cmd_pretrain(&args.opts()),
        Command::Finetune(args) => cmd_finetune(&args.opts()),
        Command::Sample(args) => cmd_sample(&args.opts()),
        Command::EvalBoltzmann(args) => cmd_eval_boltzmann(&args.opts()),
        Command::Gradcheck { config, seed } => {
            let mut s = 0u64;
            if let Some(path) = config {
                s = load_config(path)?.train.seed;
            }
            if let Some(flag) = seed {
                s = *flag;
            }
            cmd_gradcheck(s).map(|_| ())
        }
        Command::Inspect { path } => cmd_inspect(path),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version arrive here too; clap routes them to stdout
            // and they are not failures.
            let is_usage_error = e.use_stderr();
            let _ = e.print();
            std::process::exit(if is_usage_error { 1 } else { 0 });
        }
    };
    if let Err(e) = dispatch(&cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
