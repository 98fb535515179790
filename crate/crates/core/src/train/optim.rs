//! SGD with momentum, Adam and AdamW, each keeping its own moment buffers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adamw,
}

fn default_weight_decay() -> f64 {
    5e-5
}
fn default_momentum() -> f64 {
    0.9
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    /// SGD only.
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

impl OptimizerConfig {
    pub fn new(kind: OptimizerKind, lr: f64) -> Self {
        OptimizerConfig {
            kind,
            lr,
            weight_decay: default_weight_decay(),
            momentum: default_momentum(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn with_weight_decay(mut self, wd: f64) -> Self {
        self.weight_decay = wd;
        self
    }

    /// `lr = 0` is accepted so a run can be frozen for diagnostics.
    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..1.0).contains(&v);
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be finite and >= 0", self.lr)));
        }
        if !(self.weight_decay >= 0.0) || !(self.eps > 0.0) {
            return Err(Error::Config("weight decay must be >= 0 and eps > 0".into()));
        }
        if !unit(self.momentum) || !unit(self.beta1) || !unit(self.beta2) {
            return Err(Error::Config("momentum and betas must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Moment buffers for one optimizer, aligned with a [`ParamStore`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    /// SGD velocity or Adam first moment.
    pub first: Vec<Tensor<T>>,
    /// Adam second moment; empty for SGD.
    pub second: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    /// Apply one update. Fails without touching anything if a gradient is
    /// not finite.
    pub fn step(&mut self, cfg: &OptimizerConfig, params: &mut ParamStore<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Contract(format!(
                "{} gradients for {} parameters",
                grads.len(),
                params.len()
            )));
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::dim("optimizer_step", p.value.shape(), g.shape()));
            }
            if !g.is_finite() {
                return Err(Error::Numeric(format!("gradient of `{}` is not finite", p.name)));
            }
        }
        if self.first.is_empty() {
            self.first = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
            if cfg.kind != OptimizerKind::Sgd {
                self.second = self.first.clone();
            }
        }
        self.step += 1;
        let c = |v: f64| T::of_f64(v);
        let (lr, wd) = (c(cfg.lr), c(cfg.weight_decay));
        let decay = cfg.weight_decay != 0.0;
        match cfg.kind {
            OptimizerKind::Sgd => {
                let mu = c(cfg.momentum);
                for (i, g) in grads.iter().enumerate() {
                    let p = params.value_mut(ParamId(i)).data_mut();
                    let v = self.first[i].data_mut();
                    for ((p, v), &g) in p.iter_mut().zip(v.iter_mut()).zip(g.data()) {
                        let g = if decay { g + wd * *p } else { g };
                        *v = mu * *v + g;
                        *p = *p - lr * *v;
                    }
                }
            }
            OptimizerKind::Adam | OptimizerKind::Adamw => {
                let decoupled = cfg.kind == OptimizerKind::Adamw;
                let (b1, b2, eps) = (c(cfg.beta1), c(cfg.beta2), c(cfg.eps));
                let t = self.step as i32;
                let corr1 = T::one() - c(cfg.beta1.powi(t));
                let corr2 = T::one() - c(cfg.beta2.powi(t));
                for (i, g) in grads.iter().enumerate() {
                    let p = params.value_mut(ParamId(i)).data_mut();
                    let m = self.first[i].data_mut();
                    let v = self.second[i].data_mut();
                    for (((p, m), v), &g) in p.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g.data()) {
                        let g = if decay && !decoupled { g + wd * *p } else { g };
                        *m = b1 * *m + (T::one() - b1) * g;
                        *v = b2 * *v + (T::one() - b2) * g * g;
                        let u = (*m / corr1) / ((*v / corr2).sqrt() + eps);
                        let u = if decay && decoupled { u + wd * *p } else { u };
                        *p = *p - lr * u;
                    }
                }
            }
        }
        Ok(())
    }
}
