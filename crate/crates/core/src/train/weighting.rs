//! Per-dataset loss weights: static, Dynamic Weight Averaging (DWA) and
//! Dynamic Task Prioritization (DTP).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// κ is clamped to `[KAPPA_MIN, 1 − KAPPA_MIN]` before use.
pub const KAPPA_MIN: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeighterKind {
    #[default]
    Static,
    Dwa,
    Dtp,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WeighterConfig {
    pub kind: WeighterKind,
    /// DTP focusing parameter γ.
    pub gamma: f64,
    /// DWA softmax temperature.
    pub temperature: f64,
    /// Iterations per loss / top-1 window.
    pub window: usize,
}

impl Default for WeighterConfig {
    fn default() -> Self {
        WeighterConfig {
            kind: WeighterKind::Static,
            gamma: 1.0,
            temperature: 1.0,
            window: 500,
        }
    }
}

impl WeighterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || !(self.gamma >= 0.0) || !(self.temperature > 0.0) {
            return Err(Error::Config(
                "weighter needs window > 0, gamma >= 0 and temperature > 0".into(),
            ));
        }
        Ok(())
    }
}

/// DWA: `wᵢ = N·exp(rᵢ/temp) / Σₙ exp(rₙ/temp)` with `rᵢ = Lᵢ(t−1)/Lᵢ(t−2)`
/// and N the number of datasets. `window_means[i]` is `(Lᵢ(t−1), Lᵢ(t−2))`.
/// Any missing or non-positive mean gives all-ones.
pub fn dwa_weights(window_means: &[Option<(f64, f64)>], temperature: f64) -> Vec<f64> {
    let n = window_means.len();
    let ratios: Option<Vec<f64>> = window_means
        .iter()
        .map(|m| match *m {
            Some((last, prev)) if last > 0.0 && prev > 0.0 => Some(last / prev),
            Some(_) => {
                log::warn!("non-positive loss window mean; DWA falls back to unit weights");
                None
            }
            None => None,
        })
        .collect();
    let Some(ratios) = ratios else {
        return vec![1.0; n];
    };
    let scaled: Vec<f64> = ratios.iter().map(|r| r / temperature).collect();
    let top = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scaled.iter().map(|s| (s - top).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| n as f64 * e / total).collect()
}

/// DTP: `w = −(1−κ)^γ · ln κ`, κ clamped into `(0, 1)`.
pub fn dtp_weight(kappa: f64, gamma: f64) -> f64 {
    let k = kappa.clamp(KAPPA_MIN, 1.0 - KAPPA_MIN);
    -(1.0 - k).powf(gamma) * k.ln()
}

#[derive(Clone, Debug, Default, PartialEq)]
struct History {
    /// Losses of the window being filled.
    pending: Vec<f64>,
    /// Means of the last two completed loss windows, newest first.
    last: Option<f64>,
    prev: Option<f64>,
    /// Most recent top-1 values, at most one window.
    top1: VecDeque<f64>,
}

/// Weighting state for every dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct LossWeighter {
    config: WeighterConfig,
    history: Vec<History>,
}

impl LossWeighter {
    pub fn new(config: WeighterConfig, datasets: usize) -> Result<Self> {
        config.validate()?;
        Ok(LossWeighter {
            config,
            history: vec![History::default(); datasets],
        })
    }

    pub fn config(&self) -> &WeighterConfig {
        &self.config
    }

    /// Record one batch: its unweighted loss and top-1 accuracy.
    pub fn update(&mut self, dataset: usize, loss: f64, top1: f64) {
        let window = self.config.window;
        let h = &mut self.history[dataset];
        h.pending.push(loss);
        if h.pending.len() == window {
            let mean = h.pending.iter().sum::<f64>() / window as f64;
            h.prev = h.last.replace(mean);
            h.pending.clear();
        }
        h.top1.push_back(top1);
        if h.top1.len() > window {
            h.top1.pop_front();
        }
    }

    /// `(Lᵢ(t−1), Lᵢ(t−2))` once two loss windows have completed.
    pub fn window_means(&self, dataset: usize) -> Option<(f64, f64)> {
        let h = &self.history[dataset];
        h.last.zip(h.prev)
    }

    /// Mean top-1 over the last full window, if one exists.
    pub fn kappa(&self, dataset: usize) -> Option<f64> {
        let h = &self.history[dataset];
        (h.top1.len() == self.config.window).then(|| h.top1.iter().sum::<f64>() / h.top1.len() as f64)
    }

    /// Current weight for every dataset.
    pub fn weights(&self) -> Vec<f64> {
        let n = self.history.len();
        match self.config.kind {
            WeighterKind::Static => vec![1.0; n],
            WeighterKind::Dwa => {
                let means: Vec<_> = (0..n).map(|i| self.window_means(i)).collect();
                dwa_weights(&means, self.config.temperature)
            }
            WeighterKind::Dtp => (0..n)
                .map(|i| self.kappa(i).map_or(1.0, |k| dtp_weight(k, self.config.gamma)))
                .collect(),
        }
    }

    pub fn weight(&self, dataset: usize) -> f64 {
        self.weights()[dataset]
    }
}
