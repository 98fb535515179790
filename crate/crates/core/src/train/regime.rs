//! Hyperparameter regimes: one optimizer for all datasets, one per
//! modality, or one per dataset.

use serde::{Deserialize, Serialize};

use super::optim::{OptimizerConfig, OptimizerKind};
use crate::data::{DatasetSpec, Modality};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeMode {
    #[default]
    All,
    Domain,
    Each,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RegimeConfig {
    pub mode: RegimeMode,
    /// Explicit optimizer table: one entry for `all`, `[image, video]` for
    /// `domain`, one per dataset for `each`. Empty selects the presets.
    pub optimizers: Vec<OptimizerConfig>,
    /// Multiplies every resolved learning rate.
    pub lr_scale: f64,
}

impl Default for RegimeConfig {
    fn default() -> Self {
        RegimeConfig {
            mode: RegimeMode::All,
            optimizers: Vec::new(),
            lr_scale: 1.0,
        }
    }
}

impl RegimeConfig {
    /// Preset tables: `all` = AdamW 1e-5; `domain` = Adam 1e-5 for images,
    /// AdamW 1e-5 for videos; `each` = Adam 1e-5, AdamW 1e-5, SGD 1e-3,
    /// Adam 1e-5 for four datasets (two image sets, then two video sets).
    pub fn preset(mode: RegimeMode, datasets: usize) -> Result<Vec<OptimizerConfig>> {
        use OptimizerKind::*;
        let table: Vec<(OptimizerKind, f64)> = match mode {
            RegimeMode::All => vec![(Adamw, 1e-5)],
            RegimeMode::Domain => vec![(Adam, 1e-5), (Adamw, 1e-5)],
            RegimeMode::Each if datasets == 4 => {
                vec![(Adam, 1e-5), (Adamw, 1e-5), (Sgd, 1e-3), (Adam, 1e-5)]
            }
            RegimeMode::Each => {
                return Err(Error::Config(format!(
                    "the `each` preset covers 4 datasets; give an explicit table for {datasets}"
                )))
            }
        };
        Ok(table.into_iter().map(|(k, lr)| OptimizerConfig::new(k, lr)).collect())
    }

    /// One optimizer config per dataset, in dataset order.
    pub fn resolve(&self, datasets: &[DatasetSpec]) -> Result<Vec<OptimizerConfig>> {
        if !(self.lr_scale > 0.0) {
            return Err(Error::Config("lr_scale must be positive".into()));
        }
        let table = if self.optimizers.is_empty() {
            Self::preset(self.mode, datasets.len())?
        } else {
            self.optimizers.clone()
        };
        let arity = match self.mode {
            RegimeMode::All => 1,
            RegimeMode::Domain => 2,
            RegimeMode::Each => datasets.len(),
        };
        if table.len() != arity {
            return Err(Error::Config(format!(
                "regime {:?} needs {arity} optimizer entries, got {}",
                self.mode,
                table.len()
            )));
        }
        datasets
            .iter()
            .enumerate()
            .map(|(i, spec)| {
                let mut cfg = match self.mode {
                    RegimeMode::All => table[0].clone(),
                    RegimeMode::Domain => table[(spec.modality == Modality::Video) as usize].clone(),
                    RegimeMode::Each => table[i].clone(),
                };
                cfg.lr *= self.lr_scale;
                cfg.validate()?;
                Ok(cfg)
            })
            .collect()
    }
}
