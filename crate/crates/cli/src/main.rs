//! Command-line entry point. Exit codes: 0 success, 1 validation error,
//! 2 numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cbe_cli::commands::{
    cmd_elude, cmd_eval, cmd_fit, cmd_ibd, cmd_netdissect, cmd_prune, cmd_synth, CliError,
};
use cbe_cli::config::{Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "cbe", about = "Concept-based explanations of black-box classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Path to the run configuration (JSON, or TOML by extension).
    #[arg(long)]
    config: PathBuf,
    /// Output directory override.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override (applies to train, split, and synth seeds).
    #[arg(long)]
    seed: Option<u64>,
    /// Setting override: uuu_ff, uuu_f, uu_ff, uu_f, u_ff, u_f, or all.
    #[arg(long)]
    setting: Option<String>,
    /// Selected-concept count override.
    #[arg(long)]
    k: Option<usize>,
    /// Replace the lambda2 candidate list with a single value.
    #[arg(long)]
    lambda2: Option<f64>,
    /// Activation threshold quantile override (netdissect).
    #[arg(long)]
    quantile: Option<f64>,
    /// Correlation percentile override (prune).
    #[arg(long)]
    percentile: Option<f64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the configured synthetic dataset.
    Synth(CommonArgs),
    /// Prune the concept vocabulary per understandability level.
    Prune(CommonArgs),
    /// Fit explanations, sweeping lambda2 per setting.
    Fit(CommonArgs),
    /// Evaluate fitted models on the test split.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Model files to evaluate; defaults to the fitted settings in the
        /// output directory.
        #[arg(long)]
        models: Vec<PathBuf>,
    },
    /// Region-level neuron/concept alignment report.
    Netdissect(CommonArgs),
    /// Per-class non-negative decomposition.
    Ibd(CommonArgs),
    /// Per-class sparse annotation-space fit.
    Elude(CommonArgs),
}

fn load_config(common: &CommonArgs) -> Result<RunConfig, CliError> {
    let mut config =
        RunConfig::load(&common.config).map_err(|e| CliError::Validation(e.to_string()))?;
    config.apply(&Overrides {
        out: common.out.clone(),
        seed: common.seed,
        setting: common.setting.clone(),
        k: common.k,
        lambda2: common.lambda2,
        quantile: common.quantile,
        percentile: common.percentile,
    });
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Synth(common) => cmd_synth(&load_config(common)?),
        Command::Prune(common) => cmd_prune(&load_config(common)?),
        Command::Fit(common) => cmd_fit(&load_config(common)?),
        Command::Eval { common, models } => cmd_eval(&load_config(common)?, models),
        Command::Netdissect(common) => cmd_netdissect(&load_config(common)?),
        Command::Ibd(common) => cmd_ibd(&load_config(common)?),
        Command::Elude(common) => cmd_elude(&load_config(common)?),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
