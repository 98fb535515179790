//! `ivit`: synth, train, eval, gradcheck and export.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ivit_cli::commands::{cmd_eval, cmd_gradcheck, cmd_synth, load_tiny};
use ivit_cli::config::{Overrides, RunConfig, SEED_ENV};
use ivit_cli::export::cmd_export;
use ivit_cli::train::cmd_train;
use ivit_cli::CliResult;
use ivit_core::data::Split;
use ivit_core::train::{RegimeMode, WeighterKind};
use ivit_core::vit::ShiftVariant;
use ivit_core::DType;
use serde::de::DeserializeOwned;

/// Parse a lowercase enum value through its serde names.
fn named<T: DeserializeOwned>(s: &str) -> Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|e| e.to_string())
}

#[derive(Parser)]
#[command(name = "ivit", version, about = "Joint image/video ViT experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic datasets listed in the config's `synth` section.
    Synth {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train on the configured datasets. IVF_SEED overrides schedule.seed;
    /// flags override both.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        iterations: Option<u64>,
        #[arg(long)]
        eval_every: Option<u64>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        lr_scale: Option<f64>,
        /// all | domain | each
        #[arg(long, value_parser = named::<RegimeMode>)]
        mode: Option<RegimeMode>,
        /// static | dwa | dtp
        #[arg(long, value_parser = named::<WeighterKind>)]
        weighter: Option<WeighterKind>,
        /// none | tokenshift
        #[arg(long, value_parser = named::<ShiftVariant>)]
        shift: Option<ShiftVariant>,
        /// f32 | f64
        #[arg(long, value_parser = named::<DType>)]
        dtype: Option<DType>,
    },
    /// Top-1/top-5 of a checkpoint on one split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Manifest file or dataset directory.
        #[arg(long)]
        dataset: PathBuf,
        /// train | val
        #[arg(long, default_value = "val", value_parser = named::<Split>)]
        split: Split,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
    },
    /// Finite-difference check of every parameter gradient of a tiny f64
    /// model; fails above 1e-4 max relative error.
    Gradcheck {
        /// JSON overriding the tiny model, batch and step.
        #[arg(long)]
        config: Option<PathBuf>,
        /// none | tokenshift
        #[arg(long, value_parser = named::<ShiftVariant>)]
        shift: Option<ShiftVariant>,
        #[arg(long)]
        seed: Option<u64>,
        /// Break the softmax backward to prove the check can fail.
        #[arg(long, hide = true)]
        sabotage: bool,
    },
    /// Split a metrics log into one CSV per dataset.
    Export {
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Number of datasets; defaults to the run's resolved config.
        #[arg(long)]
        datasets: Option<usize>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Synth { config } => {
            for path in cmd_synth(&RunConfig::load(&config)?)? {
                println!("{}", path.display());
            }
        }
        Command::Train {
            config,
            iterations,
            eval_every,
            seed,
            batch_size,
            output,
            lr_scale,
            mode,
            weighter,
            shift,
            dtype,
        } => {
            let mut cfg = RunConfig::load(&config)?;
            let overrides = Overrides {
                iterations,
                eval_every,
                seed,
                batch_size,
                output_dir: output,
                lr_scale,
                mode,
                weighter,
                shift,
                dtype,
            };
            cfg.apply(&overrides, std::env::var(SEED_ENV).ok().as_deref())?;
            let summary = cmd_train(cfg)?;
            for r in &summary.final_eval {
                println!("{}", serde_json::to_string(r).expect("record serializes"));
            }
        }
        Command::Eval {
            checkpoint,
            dataset,
            split,
            batch_size,
        } => {
            let r = cmd_eval(&checkpoint, &dataset, split, batch_size)?;
            eprintln!(
                "{} {:?}: top1 {:.4} top5 {:.4} ({} samples)",
                r.name, r.split, r.top1, r.top5, r.samples
            );
            println!("{}", serde_json::to_string(&r).expect("record serializes"));
        }
        Command::Gradcheck {
            config,
            shift,
            seed,
            sabotage,
        } => {
            let mut tiny = load_tiny(config.as_deref())?;
            if let Some(s) = seed {
                tiny.seed = s;
            }
            let summary = cmd_gradcheck(tiny, shift, sabotage)?;
            println!("{}", serde_json::to_string(&summary).expect("summary serializes"));
            summary.into_result()?;
        }
        Command::Export {
            metrics,
            out,
            datasets,
        } => {
            for path in cmd_export(&metrics, &out, datasets)? {
                println!("{}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
