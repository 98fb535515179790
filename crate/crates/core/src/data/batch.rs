//! Batch assembly.

use rand::Rng;

use super::augment::{augment_image, center_clip, eval_image, sample_clip, AugmentConfig, ClipTransform};
use super::manifest::{Dataset, Modality};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Random augmentation for training, fixed preprocessing for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Images `(B, 3, S, S)` or clips `(B, T, 3, S, S)` with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleBatch {
    pub dataset: usize,
    pub modality: Modality,
    pub pixels: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl SampleBatch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

fn clip(ds: &Dataset, index: usize, cfg: &AugmentConfig, mode: Mode, rng: &mut impl Rng) -> Result<Vec<f32>> {
    let video = ds.tensor(index);
    let (f, h, w) = (video.shape()[0], video.shape()[2], video.shape()[3]);
    let spec = &ds.spec;
    let (frames, transform) = match mode {
        Mode::Train => (
            sample_clip(f, spec.frames_per_clip, spec.fps, cfg.clip_seconds, rng)?,
            ClipTransform::sample(h, w, cfg, rng),
        ),
        Mode::Eval => (
            center_clip(f, spec.frames_per_clip, spec.fps, cfg.clip_seconds)?,
            ClipTransform::center(h, w, cfg.output_size),
        ),
    };
    let per_frame = 3 * h * w;
    let mut out = Vec::with_capacity(frames.len() * 3 * cfg.output_size * cfg.output_size);
    for k in frames {
        let frame = Tensor::new(
            vec![3, h, w],
            video.data()[k * per_frame..(k + 1) * per_frame].to_vec(),
        )?;
        out.extend_from_slice(transform.apply(&frame)?.data());
    }
    Ok(out)
}

/// Load, augment and stack the records at `indices`.
pub fn assemble_batch(
    ds: &Dataset,
    indices: &[usize],
    cfg: &AugmentConfig,
    mode: Mode,
    rng: &mut impl Rng,
) -> Result<SampleBatch> {
    let s = cfg.output_size;
    let t = ds.spec.frames_per_clip;
    let mut data = Vec::with_capacity(indices.len() * t * 3 * s * s);
    let mut labels = Vec::with_capacity(indices.len());
    for &i in indices {
        if i >= ds.len() {
            return Err(Error::Index {
                op: "assemble_batch",
                index: i,
                extent: ds.len(),
            });
        }
        let wrap = |e: Error| Error::Manifest {
            path: ds.spec.manifest.clone(),
            record: Some(i),
            reason: e.to_string(),
        };
        match ds.spec.modality {
            Modality::Image => {
                let img = match mode {
                    Mode::Train => augment_image(ds.tensor(i), cfg, rng),
                    Mode::Eval => eval_image(ds.tensor(i), s),
                }
                .map_err(wrap)?;
                data.extend_from_slice(img.data());
            }
            Modality::Video => data.extend(clip(ds, i, cfg, mode, rng).map_err(wrap)?),
        }
        labels.push(ds.label(i));
    }
    let shape = match ds.spec.modality {
        Modality::Image => vec![indices.len(), 3, s, s],
        Modality::Video => vec![indices.len(), t, 3, s, s],
    };
    let pixels = Tensor::new(shape, data)?;
    if !pixels.is_finite() {
        return Err(Error::Numeric(format!("non-finite pixels in dataset {}", ds.spec.id)));
    }
    Ok(SampleBatch {
        dataset: ds.spec.id,
        modality: ds.spec.modality,
        pixels,
        labels,
    })
}
