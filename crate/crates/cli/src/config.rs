//! The run configuration document and its resolution against flags, the
//! environment and the file system.

use std::path::{Path, PathBuf};

use ivit_core::data::{AugmentConfig, Dataset, Split, SynthConfig, MANIFEST_FILE};
use ivit_core::train::{RegimeConfig, RegimeMode, TrainConfig, WeighterConfig, WeighterKind};
use ivit_core::vit::{ShiftVariant, VitConfig};
use ivit_core::{DType, Error, Result};
use serde::{Deserialize, Serialize};

/// Environment variable that replaces `schedule.seed`.
pub const SEED_ENV: &str = "IVF_SEED";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Backbone shape. `dataset_heads` may be left empty; it is then filled
    /// from the datasets' class counts.
    pub model: VitConfig,
    /// Datasets for `ivit synth` to generate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub synth: Vec<SynthEntry>,
    /// Manifest files (or directories holding `manifest.json`) in dataset-id
    /// order.
    #[serde(default)]
    pub datasets: Vec<PathBuf>,
    #[serde(default)]
    pub regime: RegimeConfig,
    #[serde(default)]
    pub weighter: WeighterConfig,
    #[serde(default)]
    pub schedule: Schedule,
    /// Training augmentation; derived from the model input size when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub augment: Option<AugmentConfig>,
    #[serde(default)]
    pub io: IoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthEntry {
    pub dir: PathBuf,
    pub dataset: SynthConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Schedule {
    pub iterations: u64,
    /// Evaluate every `eval_every` iterations; 0 evaluates only at the end.
    pub eval_every: u64,
    pub seed: u64,
    pub batch_size: usize,
    pub eval_batch_size: usize,
    pub eval_splits: Vec<Split>,
    pub dtype: DType,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            iterations: 1000,
            eval_every: 0,
            seed: 0,
            batch_size: 6,
            eval_batch_size: 32,
            eval_splits: vec![Split::Val],
            dtype: DType::F32,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IoConfig {
    pub output_dir: PathBuf,
}

impl Default for IoConfig {
    fn default() -> Self {
        IoConfig {
            output_dir: PathBuf::from("run"),
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub iterations: Option<u64>,
    pub eval_every: Option<u64>,
    pub seed: Option<u64>,
    pub batch_size: Option<usize>,
    pub output_dir: Option<PathBuf>,
    pub lr_scale: Option<f64>,
    pub mode: Option<RegimeMode>,
    pub weighter: Option<WeighterKind>,
    pub shift: Option<ShiftVariant>,
    pub dtype: Option<DType>,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    /// Read a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let mut cfg = Self::parse(&text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.datasets.iter_mut().for_each(rebase);
        cfg.synth.iter_mut().for_each(|s| rebase(&mut s.dir));
        rebase(&mut cfg.io.output_dir);
        Ok(cfg)
    }

    /// Precedence: flags, then `IVF_SEED` (seed only), then the file.
    pub fn apply(&mut self, o: &Overrides, env_seed: Option<&str>) -> Result<()> {
        if let Some(s) = env_seed {
            self.schedule.seed = s
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("{SEED_ENV}={s:?} is not an unsigned integer")))?;
        }
        let s = &mut self.schedule;
        if let Some(v) = o.iterations {
            s.iterations = v;
        }
        if let Some(v) = o.eval_every {
            s.eval_every = v;
        }
        if let Some(v) = o.seed {
            s.seed = v;
        }
        if let Some(v) = o.batch_size {
            s.batch_size = v;
        }
        if let Some(v) = o.dtype {
            s.dtype = v;
        }
        if let Some(v) = &o.output_dir {
            self.io.output_dir = v.clone();
        }
        if let Some(v) = o.lr_scale {
            self.regime.lr_scale = v;
        }
        if let Some(v) = o.mode {
            self.regime.mode = v;
        }
        if let Some(v) = o.weighter {
            self.weighter.kind = v;
        }
        if let Some(v) = o.shift {
            self.model.shift = v;
        }
        Ok(())
    }

    pub fn augment(&self) -> AugmentConfig {
        self.augment
            .clone()
            .unwrap_or_else(|| AugmentConfig::for_output(self.model.height))
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            batch_size: self.schedule.batch_size,
            seed: self.schedule.seed,
            augment: self.augment(),
        }
    }

    /// Open every dataset, fill the head table if empty and validate the
    /// sections. Model/dataset agreement is checked when the trainer is
    /// built.
    pub fn resolve(&mut self) -> Result<Vec<Dataset>> {
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets listed".into()));
        }
        let datasets = self
            .datasets
            .iter()
            .map(|p| Dataset::open(manifest_path(p)))
            .collect::<Result<Vec<_>>>()?;
        let classes: Vec<usize> = datasets.iter().map(|d| d.spec.num_classes).collect();
        if self.model.dataset_heads.is_empty() {
            self.model.dataset_heads = classes;
        }
        self.model.validate()?;
        self.weighter.validate()?;
        let specs: Vec<_> = datasets.iter().map(|d| d.spec.clone()).collect();
        self.regime.resolve(&specs)?;
        if self.schedule.batch_size == 0 || self.schedule.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        Ok(datasets)
    }
}

/// `path` itself, or `path/manifest.json` for a directory.
pub fn manifest_path(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join(MANIFEST_FILE)
    } else {
        path.to_path_buf()
    }
}
