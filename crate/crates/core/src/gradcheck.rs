//! Central-difference gradient checking.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::params::trunc_normal;
use crate::tensor::{Scalar, Tensor};
use crate::vit::{ShiftVariant, VitConfig, VitModel};

/// Outcome of [`finite_diff_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// Max over all elements of |analytic − numeric| / max(|analytic|, |numeric|, 1e-8).
    pub max_rel_error: f64,
    /// (parameter index, element index) where the max was attained.
    pub worst: Option<(usize, usize)>,
    /// Analytic and central-difference values at `worst`.
    pub worst_values: (f64, f64),
    pub elements: usize,
}

/// Compare `analytic` gradients against central differences of `f`.
///
/// `f` evaluates the scalar objective for a full set of parameter values;
/// it must be deterministic. `analytic[i]` must have the shape of `params[i]`.
pub fn finite_diff_check<T, F>(
    mut f: F,
    params: &[Tensor<T>],
    analytic: &[Tensor<T>],
    h: f64,
) -> Result<GradCheckReport>
where
    T: Scalar,
    F: FnMut(&[Tensor<T>]) -> Result<f64>,
{
    assert!(h > 0.0, "step must be positive");
    assert_eq!(params.len(), analytic.len());
    let mut work: Vec<Tensor<T>> = params.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst: None,
        worst_values: (0.0, 0.0),
        elements: 0,
    };
    for (pi, param) in params.iter().enumerate() {
        assert_eq!(param.shape(), analytic[pi].shape());
        for ei in 0..param.numel() {
            let orig = param.data()[ei];
            work[pi].data_mut()[ei] = orig + T::of_f64(h);
            let plus = f(&work)?;
            work[pi].data_mut()[ei] = orig - T::of_f64(h);
            let minus = f(&work)?;
            work[pi].data_mut()[ei] = orig;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[ei].to_f64().unwrap_or(f64::NAN);
            let denom = a.abs().max(numeric.abs()).max(1e-8);
            let rel = (a - numeric).abs() / denom;
            report.elements += 1;
            if !(rel <= report.max_rel_error) {
                report.max_rel_error = rel;
                report.worst = Some((pi, ei));
                report.worst_values = (a, numeric);
            }
        }
    }
    Ok(report)
}


/// Gradient check of mean cross-entropy for a whole model at f64, over
/// every parameter. `sabotage` runs the analytic pass on a tape with a
/// deliberately broken softmax backward (negative control).
pub fn check_model(
    model: &VitModel<f64>,
    pixels: &Tensor<f64>,
    labels: &[usize],
    head: usize,
    h: f64,
    sabotage: bool,
) -> Result<GradCheckReport> {
    let tape = if sabotage { Tape::sabotaged() } else { Tape::new() };
    let bound = model.params().bind(&tape);
    let loss = model.forward(&tape, &bound, pixels, head)?.cross_entropy(labels)?;
    let grads = tape.backward(loss)?;
    let analytic = bound.gradients(&grads);
    let mut probe = model.clone();
    finite_diff_check(
        |values| {
            probe.params_mut().set_values(values)?;
            let tape = Tape::new();
            let bound = probe.params().bind(&tape);
            let loss = probe.forward(&tape, &bound, pixels, head)?.cross_entropy(labels)?;
            loss.value().item()
        },
        &model.params().values(),
        &analytic,
        h,
    )
}

/// Upper bound on parameter count for [`TinyCheck`]; each element costs two
/// forward passes.
pub const TINY_MAX_PARAMS: usize = 20_000;

/// A small model and batch for the end-to-end gradient check.
///
/// Parameters are the usual initialisation plus a truncated N(0, `perturb`²)
/// offset, so every gradient sits well above f64 roundoff without
/// saturating the softmax. Pixels are N(0, 1).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TinyCheck {
    pub model: VitConfig,
    pub batch: usize,
    pub frames: usize,
    pub seed: u64,
    pub perturb: f64,
    pub step: f64,
}

impl Default for TinyCheck {
    fn default() -> Self {
        TinyCheck {
            model: VitConfig {
                height: 8,
                width: 8,
                patch: 4,
                dim: 16,
                depth: 2,
                heads: 2,
                mlp_hidden: 32,
                shift: ShiftVariant::TokenShift,
                shift_back: None,
                shift_forward: None,
                dataset_heads: vec![3],
            },
            batch: 2,
            frames: 3,
            seed: 0,
            perturb: 0.3,
            step: 1e-5,
        }
    }
}

impl TinyCheck {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let params: usize = crate::vit::expected_parameters(&self.model)
            .iter()
            .map(|(_, s)| s.iter().product::<usize>())
            .sum();
        if params > TINY_MAX_PARAMS {
            return Err(Error::Config(format!(
                "gradcheck model has {params} parameters; limit is {TINY_MAX_PARAMS}"
            )));
        }
        if self.batch == 0 || self.frames == 0 || !(self.step > 0.0) {
            return Err(Error::Config("batch, frames and step must be positive".into()));
        }
        Ok(())
    }

    /// Build the model, pixels and labels, then check head 0.
    pub fn run(&self, sabotage: bool) -> Result<GradCheckReport> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let base = VitModel::<f64>::init(self.model.clone(), &mut rng)?;
        let model = VitModel::from_store(
            self.model.clone(),
            base.params().map_values(|p| {
                p.value
                    .add(&trunc_normal(p.value.shape(), self.perturb, &mut rng))
                    .expect("same shape")
            }),
        )?;
        let m = &self.model;
        let pixels = trunc_normal(&[self.batch, self.frames, 3, m.height, m.width], 1.0, &mut rng);
        let classes = m.dataset_heads[0];
        let labels: Vec<usize> = (0..self.batch).map(|_| rng.random_range(0..classes)).collect();
        check_model(&model, &pixels, &labels, 0, self.step, sabotage)
    }
}
