//! The multi-dataset training loop and evaluation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{topk_accuracy, MetricsRecord};
use super::optim::{OptimizerConfig, OptimizerState};
use super::regime::RegimeConfig;
use super::sampler::EpochSampler;
use super::weighting::{LossWeighter, WeighterConfig};
use crate::autodiff::Tape;
use crate::data::rng::{stream_rng, Stream};
use crate::data::{assemble_batch, AugmentConfig, Dataset, Mode, Modality, Split};
use crate::error::{Error, Result};
use crate::tensor::Scalar;
use crate::vit::VitModel;

fn default_batch_size() -> usize {
    6
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default)]
    pub augment: AugmentConfig,
}

/// Check that datasets, model and augmentation agree.
pub fn check_setup<T: Scalar>(model: &VitModel<T>, datasets: &[Dataset], augment: &AugmentConfig) -> Result<()> {
    augment.validate()?;
    let cfg = model.config();
    if datasets.is_empty() {
        return Err(Error::Config("no datasets".into()));
    }
    if cfg.dataset_heads.len() != datasets.len() {
        return Err(Error::Config(format!(
            "model has {} heads for {} datasets",
            cfg.dataset_heads.len(),
            datasets.len()
        )));
    }
    if (cfg.height, cfg.width) != (augment.output_size, augment.output_size) {
        return Err(Error::Config(format!(
            "model input {}x{} differs from augmentation output {}",
            cfg.height, cfg.width, augment.output_size
        )));
    }
    for (i, ds) in datasets.iter().enumerate() {
        if ds.spec.id != i {
            return Err(Error::Config(format!(
                "dataset `{}` has id {}; ids must be 0..{} in order",
                ds.spec.name,
                ds.spec.id,
                datasets.len()
            )));
        }
        if ds.spec.num_classes != cfg.dataset_heads[i] {
            return Err(Error::Config(format!(
                "dataset `{}` has {} classes but head {i} has {}",
                ds.spec.name, ds.spec.num_classes, cfg.dataset_heads[i]
            )));
        }
        if ds.spec.modality == Modality::Video {
            cfg.warn_if_shallow(ds.spec.frames_per_clip);
        }
    }
    Ok(())
}

/// Model, per-dataset optimizer state, weighter and samplers.
#[derive(Clone, Debug)]
pub struct Trainer<T> {
    pub model: VitModel<T>,
    datasets: Vec<Dataset>,
    config: TrainConfig,
    optimizers: Vec<OptimizerConfig>,
    states: Vec<OptimizerState<T>>,
    weighter: LossWeighter,
    samplers: Vec<EpochSampler>,
    iteration: u64,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(
        model: VitModel<T>,
        datasets: Vec<Dataset>,
        regime: &RegimeConfig,
        weighter: WeighterConfig,
        config: TrainConfig,
    ) -> Result<Self> {
        check_setup(&model, &datasets, &config.augment)?;
        if config.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        let specs: Vec<_> = datasets.iter().map(|d| d.spec.clone()).collect();
        let optimizers = regime.resolve(&specs)?;
        let samplers = datasets
            .iter()
            .map(|d| {
                let pool = d.split(Split::Train);
                if pool.is_empty() {
                    return Err(Error::Config(format!("dataset `{}` has no training records", d.spec.name)));
                }
                Ok(EpochSampler::new(pool, config.seed, d.spec.id))
            })
            .collect::<Result<_>>()?;
        Ok(Trainer {
            weighter: LossWeighter::new(weighter, datasets.len())?,
            states: vec![OptimizerState::new(); datasets.len()],
            model,
            datasets,
            config,
            optimizers,
            samplers,
            iteration: 0,
        })
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn datasets(&self) -> &[Dataset] {
        &self.datasets
    }

    pub fn optimizers(&self) -> &[OptimizerConfig] {
        &self.optimizers
    }

    pub fn optimizer_state(&self, dataset: usize) -> &OptimizerState<T> {
        &self.states[dataset]
    }

    pub fn weighter(&self) -> &LossWeighter {
        &self.weighter
    }

    /// One iteration: for each dataset in order, sample a batch, take a
    /// weighted cross-entropy step on the shared model with that dataset's
    /// optimizer, then update the weighter.
    pub fn train_iteration(&mut self) -> Result<Vec<MetricsRecord>> {
        let t = self.iteration;
        let mut records = Vec::with_capacity(self.datasets.len());
        for i in 0..self.datasets.len() {
            let indices = self.samplers[i].next_batch(self.config.batch_size);
            let mut rng = stream_rng(self.config.seed, Stream::Batch, i as u64, t);
            let batch = assemble_batch(&self.datasets[i], &indices, &self.config.augment, Mode::Train, &mut rng)?;
            let pixels = batch.pixels.cast::<T>();
            let w = self.weighter.weight(i);

            let tape = Tape::new();
            let bound = self.model.params().bind(&tape);
            let logits = self.model.forward(&tape, &bound, &pixels, i)?;
            let loss = logits.cross_entropy(&batch.labels)?;
            let loss_value = loss.value().item()?.to_f64().unwrap_or(f64::NAN);
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!("loss of dataset {i} at iteration {t} is {loss_value}")));
            }
            let grads = tape.backward(loss.scale(T::of_f64(w)))?;
            let grads = bound.gradients(&grads);
            self.states[i]
                .step(&self.optimizers[i], self.model.params_mut(), &grads)
                .map_err(|e| match e {
                    Error::Numeric(m) => Error::Numeric(format!("dataset {i} at iteration {t}: {m}")),
                    e => e,
                })?;

            let logits = logits.value();
            let top1 = topk_accuracy(&logits, &batch.labels, 1)?;
            let top5 = topk_accuracy(&logits, &batch.labels, 5)?;
            self.weighter.update(i, loss_value, top1);
            records.push(MetricsRecord {
                iteration: t,
                dataset: i,
                loss: loss_value,
                w,
                top1,
                top5,
            });
        }
        self.iteration += 1;
        Ok(records)
    }
}

/// Top-1 / top-5 accuracy over a split.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub top1: f64,
    pub top5: f64,
    pub samples: usize,
}

/// Evaluate head `dataset.spec.id` on `split` with deterministic
/// preprocessing (full-frame resize for images, centred short-edge crop
/// and centred clip window for videos).
pub fn evaluate<T: Scalar>(
    model: &VitModel<T>,
    dataset: &Dataset,
    split: Split,
    augment: &AugmentConfig,
    batch_size: usize,
) -> Result<EvalResult> {
    let indices = dataset.split(split);
    if indices.is_empty() {
        return Err(Error::Contract(format!("dataset `{}` has an empty {split:?} split", dataset.spec.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (mut hit1, mut hit5) = (0.0, 0.0);
    for chunk in indices.chunks(batch_size.max(1)) {
        let batch = assemble_batch(dataset, chunk, augment, Mode::Eval, &mut rng)?;
        let logits = model.logits(&batch.pixels.cast::<T>(), dataset.spec.id)?;
        hit1 += topk_accuracy(&logits, &batch.labels, 1)? * chunk.len() as f64;
        hit5 += topk_accuracy(&logits, &batch.labels, 5)? * chunk.len() as f64;
    }
    let n = indices.len() as f64;
    Ok(EvalResult {
        top1: hit1 / n,
        top5: hit5 / n,
        samples: indices.len(),
    })
}
