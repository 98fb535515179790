//! `ivit train`: the configured number of iterations with periodic
//! evaluation, writing everything under the output directory.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use ivit_core::data::rng::{stream_rng, Stream};
use ivit_core::data::Dataset;
use ivit_core::train::{evaluate, write_jsonl, Trainer};
use ivit_core::vit::{save_checkpoint, VitModel};
use ivit_core::{DType, Scalar};

use crate::commands::EvalRecord;
use crate::config::RunConfig;
use crate::error::{io_error, CliError, CliResult};

pub const LOCK_FILE: &str = ".lock";
pub const RESOLVED_CONFIG: &str = "resolved_config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const EVAL_FILE: &str = "eval.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.ivck";

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> CliResult<Self> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let path = dir.join(LOCK_FILE);
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id()).map_err(|e| io_error(&path, e))?;
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(CliError::Locked(dir.to_path_buf())),
            Err(e) => Err(io_error(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

/// Final evaluation of a run.
#[derive(Clone, Debug)]
pub struct TrainSummary {
    pub output_dir: PathBuf,
    pub iterations: u64,
    pub final_eval: Vec<EvalRecord>,
}

/// Resolve `cfg`, lock the output directory and train.
pub fn cmd_train(mut cfg: RunConfig) -> CliResult<TrainSummary> {
    let datasets = cfg.resolve()?;
    let dir = cfg.io.output_dir.clone();
    let _lock = DirLock::acquire(&dir)?;
    let resolved = dir.join(RESOLVED_CONFIG);
    std::fs::write(&resolved, cfg.to_json()).map_err(|e| io_error(&resolved, e))?;
    match cfg.schedule.dtype {
        DType::F32 => run::<f32>(&cfg, datasets),
        DType::F64 => run::<f64>(&cfg, datasets),
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| io_error(path, e))
}

fn run<T: Scalar>(cfg: &RunConfig, datasets: Vec<Dataset>) -> CliResult<TrainSummary> {
    let dir = &cfg.io.output_dir;
    let seed = cfg.schedule.seed;
    let model = VitModel::<T>::init(cfg.model.clone(), &mut stream_rng(seed, Stream::Init, 0, 0))?;
    let mut trainer = Trainer::new(
        model,
        datasets,
        &cfg.regime,
        cfg.weighter.clone(),
        cfg.train_config(),
    )?;
    let metrics_path = dir.join(METRICS_FILE);
    let eval_path = dir.join(EVAL_FILE);
    let mut metrics = create(&metrics_path)?;
    let mut evals = create(&eval_path)?;
    let mut last = None;

    let eval_all = |trainer: &Trainer<T>, evals: &mut BufWriter<File>| -> CliResult<Vec<EvalRecord>> {
        let mut out = Vec::new();
        for ds in trainer.datasets() {
            for &split in &cfg.schedule.eval_splits {
                if ds.split(split).is_empty() {
                    continue;
                }
                let r = evaluate(&trainer.model, ds, split, &cfg.augment(), cfg.schedule.eval_batch_size)?;
                let rec = EvalRecord::new(trainer.iteration(), ds, split, r);
                log::info!(
                    "after {} iterations: {} {:?} top1 {:.4} top5 {:.4}",
                    rec.iterations, rec.name, split, rec.top1, rec.top5
                );
                let line = serde_json::to_string(&rec).expect("record serializes");
                writeln!(evals, "{line}").map_err(|e| io_error(&eval_path, e))?;
                out.push(rec);
            }
        }
        evals.flush().map_err(|e| io_error(&eval_path, e))?;
        Ok(out)
    };

    let every = cfg.schedule.eval_every;
    for _ in 0..cfg.schedule.iterations {
        let records = trainer.train_iteration()?;
        write_jsonl(&mut metrics, &records)?;
        if every > 0 && trainer.iteration() % every == 0 {
            metrics.flush().map_err(|e| io_error(&metrics_path, e))?;
            last = Some((trainer.iteration(), eval_all(&trainer, &mut evals)?));
        }
    }
    metrics.flush().map_err(|e| io_error(&metrics_path, e))?;
    let final_eval = match last {
        Some((at, recs)) if at == trainer.iteration() => recs,
        _ => eval_all(&trainer, &mut evals)?,
    };
    save_checkpoint(&trainer.model, dir.join(CHECKPOINT_FILE))?;
    Ok(TrainSummary {
        output_dir: dir.clone(),
        iterations: trainer.iteration(),
        final_eval,
    })
}
