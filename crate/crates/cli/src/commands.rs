//! `synth`, `eval` and `gradcheck`.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ivit_core::data::{synth_dataset, AugmentConfig, Dataset, Split};
use ivit_core::gradcheck::{GradCheckReport, TinyCheck};
use ivit_core::train::{evaluate, EvalResult};
use ivit_core::vit::{load_checkpoint, ShiftVariant};
use ivit_core::Error;
use serde::{Deserialize, Serialize};

use crate::config::{manifest_path, RunConfig};
use crate::error::{io_error, CliError, CliResult};

/// Gradient checks above this max relative error fail.
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

/// Generate every dataset in the `synth` section; returns the manifests.
pub fn cmd_synth(cfg: &RunConfig) -> CliResult<Vec<PathBuf>> {
    if cfg.synth.is_empty() {
        return Err(Error::Config("the config has no `synth` entries".into()).into());
    }
    cfg.synth
        .iter()
        .map(|entry| {
            let path = synth_dataset(&entry.dataset, &entry.dir)?;
            log::info!("wrote {} ({} train, {} val)", path.display(), entry.dataset.train, entry.dataset.val);
            Ok(path)
        })
        .collect()
}

/// One line of `eval.jsonl` and the output of `ivit eval`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    /// Training iterations completed when the evaluation ran.
    pub iterations: u64,
    pub dataset: usize,
    pub name: String,
    pub split: Split,
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

impl EvalRecord {
    pub fn new(iterations: u64, dataset: &Dataset, split: Split, r: EvalResult) -> Self {
        EvalRecord {
            iterations,
            dataset: dataset.spec.id,
            name: dataset.spec.name.clone(),
            split,
            top1: r.top1,
            top5: r.top5,
            samples: r.samples,
        }
    }
}

/// Evaluate a checkpoint on one split of one dataset; the head is the
/// dataset's id.
pub fn cmd_eval(checkpoint: &Path, dataset: &Path, split: Split, batch_size: usize) -> CliResult<EvalRecord> {
    let model = load_checkpoint::<f32>(checkpoint)?;
    let ds = Dataset::open(manifest_path(dataset))?;
    let cfg = model.config();
    if cfg.height != cfg.width {
        return Err(Error::Config(format!("non-square model input {}x{}", cfg.height, cfg.width)).into());
    }
    match cfg.dataset_heads.get(ds.spec.id) {
        Some(&c) if c == ds.spec.num_classes => {}
        other => {
            return Err(Error::Config(format!(
                "dataset `{}` (id {}, {} classes) does not match the checkpoint head {:?}",
                ds.spec.name, ds.spec.id, ds.spec.num_classes, other
            ))
            .into())
        }
    }
    let r = evaluate(&model, &ds, split, &AugmentConfig::for_output(cfg.height), batch_size)?;
    Ok(EvalRecord::new(0, &ds, split, r))
}

/// Load a [`TinyCheck`] file, or take the defaults.
pub fn load_tiny(path: Option<&Path>) -> CliResult<TinyCheck> {
    match path {
        None => Ok(TinyCheck::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", p.display())).into())
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckSummary {
    pub max_rel_error: f64,
    pub elements: usize,
    pub worst_param: Option<String>,
    pub worst_element: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub seconds: f64,
    pub passed: bool,
}

/// Run the end-to-end gradient check; errors if the tolerance is exceeded.
pub fn cmd_gradcheck(mut tiny: TinyCheck, shift: Option<ShiftVariant>, sabotage: bool) -> CliResult<GradCheckSummary> {
    if let Some(s) = shift {
        tiny.model.shift = s;
    }
    let start = Instant::now();
    let report: GradCheckReport = tiny.run(sabotage)?;
    let names: Vec<String> = ivit_core::vit::expected_parameters(&tiny.model)
        .into_iter()
        .map(|(n, _)| n)
        .collect();
    let summary = GradCheckSummary {
        max_rel_error: report.max_rel_error,
        elements: report.elements,
        worst_param: report.worst.map(|(p, _)| names[p].clone()),
        worst_element: report.worst.map(|(_, e)| e),
        analytic: report.worst_values.0,
        numeric: report.worst_values.1,
        seconds: start.elapsed().as_secs_f64(),
        passed: report.max_rel_error < GRADCHECK_TOLERANCE,
    };
    Ok(summary)
}

impl GradCheckSummary {
    pub fn into_result(self) -> CliResult<Self> {
        if self.passed {
            Ok(self)
        } else {
            Err(CliError::Tolerance {
                error: self.max_rel_error,
                limit: GRADCHECK_TOLERANCE,
            })
        }
    }
}
