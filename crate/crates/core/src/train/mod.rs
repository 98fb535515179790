//! Optimizers, loss weighting, sampling and the training loop.

mod metrics;
mod optim;
mod regime;
mod sampler;
mod trainer;
mod weighting;

pub use metrics::{read_jsonl, topk_accuracy, topk_hits, write_jsonl, MetricsRecord};
pub use optim::{OptimizerConfig, OptimizerKind, OptimizerState};
pub use regime::{RegimeConfig, RegimeMode};
pub use sampler::{sample_order, EpochSampler};
pub use trainer::{check_setup, evaluate, EvalResult, TrainConfig, Trainer};
pub use weighting::{dtp_weight, dwa_weights, LossWeighter, WeighterConfig, WeighterKind, KAPPA_MIN};
