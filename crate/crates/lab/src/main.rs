use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sam2b_core::model::Variant;
use sam2b_lab::{commands, ExperimentConfig, LabError, Result};

/// Reliability-aware multi-modal beam prediction lab.
#[derive(Parser)]
#[command(name = "sam2b", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario and write the dataset file plus its manifest.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Dataset file to write; defaults to `dataset.s2mb` in the configured out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train one variant; writes checkpoint, metrics, curve and log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory; defaults to the configured out_dir.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides the training seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Score a checkpoint on the test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train every configured variant and tabulate clean and degraded scores.
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Dump per-sample modality weights next to the injected degradation.
    InspectWeights {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Rejects checkpoints of any other variant.
        #[arg(long)]
        variant: Option<Variant>,
    },
}

fn load(config: Option<&Path>) -> Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn out_dir(cli: Option<PathBuf>, cfg: &ExperimentConfig) -> Result<PathBuf> {
    cli.or_else(|| cfg.out_dir.clone())
        .ok_or_else(|| LabError::Config("no output location: pass --out or set out_dir".into()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.scenario.seed = s;
            }
            let out = match out {
                Some(p) => p,
                None => out_dir(None, &cfg)?.join("dataset.s2mb"),
            };
            let ds = commands::gen(&cfg, &out)?;
            println!("wrote {}", out.display());
            println!("N = {}, Q = {}", ds.len(), ds.codebook_size());
            println!("label histogram: {:?}", ds.label_histogram());
        }
        Command::Train {
            config,
            dataset,
            out,
            seed,
            variant,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(v) = variant {
                cfg.train.variant = v;
            }
            let out = out_dir(out, &cfg)?;
            let run = commands::train_run(&cfg, &dataset, &out)?;
            let m = &run.metrics;
            println!("{}: top1 {:.4} top2 {:.4} top3 {:.4}", cfg.train.variant, m.top1, m.top2, m.top3);
        }
        Command::Eval { checkpoint, dataset, out } => {
            let m = commands::eval(&checkpoint, &dataset, &out)?;
            println!("top1 {:.4} top2 {:.4} top3 {:.4} over {} samples", m.top1, m.top2, m.top3, m.count);
        }
        Command::Ablate {
            config,
            dataset,
            out,
            seed,
        } => {
            let mut cfg = load(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            let out = out_dir(out, &cfg)?;
            for row in commands::ablate(&cfg, &dataset, &out)? {
                match row.outcome {
                    Ok(s) => println!("{:<14} top1 {:.4}", row.variant.name(), s.all.top[0]),
                    Err(e) => println!("{:<14} failed: {e}", row.variant.name()),
                }
            }
        }
        Command::InspectWeights {
            checkpoint,
            dataset,
            out,
            variant,
        } => {
            if let Some(v) = variant {
                sam2b_lab::format::load_checkpoint(&checkpoint, Some(v))?;
            }
            let path = commands::inspect_weights(&checkpoint, &dataset, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(LabError::exit_code(&e) as u8)
        }
    }
}
