//! `iter`: synthesize toy data, train, sample and run the ablations.

mod commands;
mod dataset;
mod manifest;

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use iter_core::RunConfig;

#[derive(Parser)]
#[command(name = "iter", version, about = "Iterative token evaluation and refinement on a toy restoration task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long)]
    out: PathBuf,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Args, Clone)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory written by `synth`.
    #[arg(long)]
    dataset: PathBuf,
    /// Comma-separated item indices; all items by default.
    #[arg(long)]
    items: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a held-out dataset of HQ/LQ token grids and images.
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Train the restoration, refiner and evaluator networks.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Restore dataset items and dump every reverse step.
    Sample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Compare mask-selection strategies on the same inputs and seeds.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated strategies (evaluator, topk).
        #[arg(long)]
        strategies: Option<String>,
    },
    /// Sweep the evaluator threshold alpha.
    SweepAlpha {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        eval: EvalArgs,
        /// Comma-separated thresholds in (0, 1).
        #[arg(long)]
        alphas: Option<String>,
    },
    /// Re-run a command from its manifest.
    Replay {
        manifest: PathBuf,
        /// Defaults to the manifest's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common, extra: &[(&str, Option<&String>)]) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &common.config {
        let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for s in &common.sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        cfg.set(k.trim(), v)?;
    }
    for (k, v) in extra {
        if let Some(v) = v {
            cfg.set(k, v)?;
        }
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn items(eval: &EvalArgs) -> Result<Option<Vec<usize>>> {
    eval.items.as_deref().map(commands::parse_items).transpose()
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common } => commands::synth(&load_config(&common, &[])?, &common.out),
        Command::Train { common, resume } => {
            commands::train(&load_config(&common, &[])?, &common.out, resume.as_deref())
        }
        Command::Sample { common, eval } => commands::sample(
            &load_config(&common, &[])?,
            &common.out,
            &eval.checkpoint,
            &eval.dataset,
            items(&eval)?.as_deref(),
        ),
        Command::Ablate {
            common,
            eval,
            strategies,
        } => commands::ablate(
            &load_config(&common, &[("ablate.strategies", strategies.as_ref())])?,
            &common.out,
            &eval.checkpoint,
            &eval.dataset,
            items(&eval)?.as_deref(),
        ),
        Command::SweepAlpha { common, eval, alphas } => commands::sweep_alpha(
            &load_config(&common, &[("sweep.alphas", alphas.as_ref())])?,
            &common.out,
            &eval.checkpoint,
            &eval.dataset,
            items(&eval)?.as_deref(),
        ),
        Command::Replay { manifest, out } => commands::replay(&manifest, out.as_deref()),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
