//! Command-line front end: parses arguments, loads the experiment config,
//! dispatches to a subcommand, and maps errors to exit codes.

mod runner;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use d2e_core::config::Config;
use d2e_core::{D2eError, Result};

#[derive(Parser)]
#[command(name = "d2e", version, about = "Direct-to-event transfer for spiking networks")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Supervised training on the direct code.
    Pretrain(RunArgs),
    /// Pretrain on the direct code, then finetune on the event code.
    Transfer(RunArgs),
    /// Transfer across the loss-mix grid, several seeds per point.
    SweepAlpha(RunArgs),
    /// Transfer once per distillation loss and compare.
    AblateLoss(RunArgs),
    /// Per-epoch accuracy-gap bound trace during a transfer run.
    BoundTrace(RunArgs),
    /// Inference energy estimate with measured firing rates.
    Energy(RunArgs),
    /// Training-cost ledger for both transfer methods.
    Cost(RunArgs),
    /// Layer-one signal strength, direct versus event code.
    Collapse(RunArgs),
    /// Gradient disagreement between the two codes at a trained point.
    Mismatch(RunArgs),
    /// Information capacity of the event code for a given image size.
    Capacity(CapacityArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config file (`key = value` lines, `#` comments).
    #[arg(long)]
    config: PathBuf,
    /// Override a config key, e.g. `--set transfer.alpha=0.4` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Directory for CSV/JSON/SVG outputs.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct CapacityArgs {
    /// Pixels per image.
    #[arg(long)]
    d: usize,
    /// Encoding window length.
    #[arg(long = "T")]
    t_steps: usize,
    /// Directory for the JSON output.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn load_config(args: &RunArgs) -> Result<Config> {
    let mut sets = Vec::with_capacity(args.sets.len());
    for raw in &args.sets {
        let (k, v) = raw
            .split_once('=')
            .ok_or_else(|| D2eError::config("--set", format!("expected KEY=VALUE, got `{raw}`")))?;
        sets.push((k.trim().to_string(), v.trim().to_string()));
    }
    let text = fs::read_to_string(&args.config).map_err(|e| {
        D2eError::config("--config", format!("cannot read `{}`: {e}", args.config.display()))
    })?;
    Config::parse(&text, &sets)
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Pretrain(a) => runner::pretrain(load_config(&a)?, &a.out),
        Cmd::Transfer(a) => runner::transfer(load_config(&a)?, &a.out),
        Cmd::SweepAlpha(a) => runner::sweep_alpha(load_config(&a)?, &a.out),
        Cmd::AblateLoss(a) => runner::ablate_loss(load_config(&a)?, &a.out),
        Cmd::BoundTrace(a) => runner::bound_trace(load_config(&a)?, &a.out),
        Cmd::Energy(a) => runner::energy(load_config(&a)?, &a.out),
        Cmd::Cost(a) => runner::cost(load_config(&a)?, &a.out),
        Cmd::Collapse(a) => runner::collapse(load_config(&a)?, &a.out),
        Cmd::Mismatch(a) => runner::mismatch(load_config(&a)?, &a.out),
        Cmd::Capacity(a) => runner::capacity(a.d, a.t_steps, &a.out),
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(match err {
                D2eError::Config { .. } => 2,
                D2eError::Divergence(_) => 3,
                D2eError::Io(_) => 4,
                _ => 1,
            })
        }
    }
}
