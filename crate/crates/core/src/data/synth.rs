//! Synthetic datasets for desk-scale experiments.
//!
//! * `blobs-image`: class `c` is a Gaussian blob of colour `c` at position
//!   `c` on a ring, over a faint tint of the same colour.
//! * `blobs-video`: the same patterns drifting along a random direction
//!   over the stored frames.
//! * `frame-order`: two classes. Each class-1 clip is the frame reversal
//!   of a class-0 clip (brightening with a blob moving down becomes
//!   darkening with the blob moving up). Both clips contain the same
//!   frames, so no single frame says anything about the label.
//!
//! Files land in `<dir>/{train,val}/NNNNNN.ivt` with `<dir>/manifest.json`.

use std::f64::consts::PI;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::manifest::{DatasetSpec, Manifest, Modality, Record, Split};
use super::rng::{stream_rng, Stream};
use crate::error::{Error, Result};
use crate::tensor::write_tensor;
use crate::tensor::Tensor;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthKind {
    BlobsImage,
    BlobsVideo,
    FrameOrder,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub kind: SynthKind,
    pub name: String,
    pub id: usize,
    pub classes: usize,
    pub train: usize,
    pub val: usize,
    /// Native square frame size.
    pub size: usize,
    /// Clip length T for video kinds.
    #[serde(default = "default_frames")]
    pub frames: usize,
    /// Frames stored per video; defaults to `2·frames` for blobs-video and
    /// exactly `frames` for frame-order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stored_frames: Option<usize>,
    #[serde(default = "default_noise")]
    pub noise: f64,
    pub seed: u64,
}

fn default_frames() -> usize {
    4
}

fn default_noise() -> f64 {
    0.05
}

impl SynthConfig {
    pub fn modality(&self) -> Modality {
        match self.kind {
            SynthKind::BlobsImage => Modality::Image,
            _ => Modality::Video,
        }
    }

    pub fn stored_frames(&self) -> usize {
        match self.kind {
            SynthKind::BlobsImage => 1,
            SynthKind::BlobsVideo => self.stored_frames.unwrap_or(2 * self.frames),
            SynthKind::FrameOrder => self.frames,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(format!("synth `{}`: {m}", self.name)));
        if self.classes == 0 || self.size < 4 || self.train == 0 {
            return fail("need classes > 0, size >= 4 and at least one train sample".into());
        }
        if self.modality() == Modality::Video && self.frames < 2 {
            return fail("video datasets need at least 2 frames per clip".into());
        }
        if self.kind == SynthKind::FrameOrder {
            if self.classes != 2 {
                return fail("frame-order has exactly 2 classes".into());
            }
            if !self.train.is_multiple_of(2) || !self.val.is_multiple_of(2) {
                return fail("frame-order sample counts must be even (clips come in pairs)".into());
            }
            if self.stored_frames.is_some_and(|f| f != self.frames) {
                return fail("frame-order stores exactly `frames` frames".into());
            }
        }
        if !(self.noise >= 0.0) {
            return fail("noise must be non-negative".into());
        }
        Ok(())
    }

    pub fn spec(&self) -> DatasetSpec {
        DatasetSpec {
            id: self.id,
            name: self.name.clone(),
            modality: self.modality(),
            num_classes: self.classes,
            frames_per_clip: if self.modality() == Modality::Image { 1 } else { self.frames },
            height: self.size,
            width: self.size,
            fps: 30.0,
            manifest: PathBuf::new(),
        }
    }
}

/// Class colour in [0, 1]³, evenly spaced in hue.
fn class_colour(c: usize, classes: usize) -> [f64; 3] {
    let h = c as f64 / classes as f64;
    [0.0, 1.0, 2.0].map(|k| 0.5 + 0.5 * (2.0 * PI * (h + k / 3.0)).cos())
}

/// Blob centre for class `c` on a ring around the frame centre.
fn class_centre(c: usize, classes: usize, size: f64) -> (f64, f64) {
    let a = 2.0 * PI * c as f64 / classes as f64;
    (size * (0.5 + 0.25 * a.sin()), size * (0.5 + 0.25 * a.cos()))
}

fn gauss(y: f64, x: f64, cy: f64, cx: f64, sigma: f64) -> f64 {
    (-((y - cy).powi(2) + (x - cx).powi(2)) / (2.0 * sigma * sigma)).exp()
}

fn noise(rng: &mut impl Rng, scale: f64) -> f64 {
    let z: f64 = StandardNormal.sample(rng);
    scale * z
}

/// One `(3, s, s)` frame of a coloured blob over a tint, centred at zero.
fn blob_frame(s: usize, colour: [f64; 3], centre: (f64, f64), noise_scale: f64, rng: &mut impl Rng) -> Vec<f32> {
    let sigma = 0.2 * s as f64;
    let mut out = Vec::with_capacity(3 * s * s);
    for col in colour {
        for y in 0..s {
            for x in 0..s {
                let g = gauss(y as f64 + 0.5, x as f64 + 0.5, centre.0, centre.1, sigma);
                out.push((col * (0.35 + g) - 0.5 + noise(rng, noise_scale)) as f32);
            }
        }
    }
    out
}

fn blobs_image(cfg: &SynthConfig, label: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let s = cfg.size as f64;
    let (cy, cx) = class_centre(label, cfg.classes, s);
    let jitter = 0.08 * s;
    let centre = (cy + rng.random_range(-jitter..=jitter), cx + rng.random_range(-jitter..=jitter));
    let data = blob_frame(cfg.size, class_colour(label, cfg.classes), centre, cfg.noise, rng);
    Tensor::new(vec![3, cfg.size, cfg.size], data).expect("sized")
}

fn blobs_video(cfg: &SynthConfig, label: usize, rng: &mut impl Rng) -> Tensor<f32> {
    let s = cfg.size as f64;
    let f = cfg.stored_frames();
    let (cy, cx) = class_centre(label, cfg.classes, s);
    let angle = rng.random_range(0.0..2.0 * PI);
    let travel = 0.15 * s;
    let colour = class_colour(label, cfg.classes);
    let mut data = Vec::with_capacity(f * 3 * cfg.size * cfg.size);
    for t in 0..f {
        let u = t as f64 / (f - 1).max(1) as f64 - 0.5;
        let centre = (cy + travel * u * angle.sin(), cx + travel * u * angle.cos());
        data.extend(blob_frame(cfg.size, colour, centre, cfg.noise, rng));
    }
    Tensor::new(vec![f, 3, cfg.size, cfg.size], data).expect("sized")
}

/// A class-0 frame-order clip: brightness ramps up and a blob moves down.
fn frame_order_clip(cfg: &SynthConfig, rng: &mut impl Rng) -> Vec<Vec<f32>> {
    let n = cfg.size;
    let s = n as f64;
    let t_len = cfg.frames;
    // Static background texture shared by all frames.
    let bumps: Vec<(f64, f64, [f64; 3])> = (0..3)
        .map(|_| {
            (
                rng.random_range(0.0..s),
                rng.random_range(0.0..s),
                [0; 3].map(|_| rng.random_range(-0.3..0.3)),
            )
        })
        .collect();
    let start = rng.random_range(-0.6..-0.2);
    let rise = rng.random_range(0.6..1.0);
    let x0 = rng.random_range(0.3 * s..0.7 * s);
    let y0 = rng.random_range(0.15 * s..0.3 * s);
    let dy = rng.random_range(0.4 * s..0.55 * s);
    (0..t_len)
        .map(|t| {
            let u = t as f64 / (t_len - 1) as f64;
            let level = start + rise * u;
            let by = y0 + dy * u;
            let mut frame = Vec::with_capacity(3 * n * n);
            for ch in 0..3 {
                for y in 0..n {
                    for x in 0..n {
                        let (yf, xf) = (y as f64 + 0.5, x as f64 + 0.5);
                        let texture: f64 = bumps
                            .iter()
                            .map(|&(cy, cx, col)| col[ch] * gauss(yf, xf, cy, cx, 0.3 * s))
                            .sum();
                        let blob = 0.8 * gauss(yf, xf, by, x0, 0.12 * s);
                        frame.push((level + texture + blob + noise(rng, cfg.noise)) as f32);
                    }
                }
            }
            frame
        })
        .collect()
}

fn stack(frames: &[Vec<f32>], size: usize) -> Tensor<f32> {
    Tensor::new(vec![frames.len(), 3, size, size], frames.concat()).expect("sized")
}

fn save(tensor: &Tensor<f32>, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_tensor(&mut w, tensor)?;
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

/// Generate the dataset under `dir` and return the manifest path. Output
/// depends only on `cfg`.
pub fn synth_dataset(cfg: &SynthConfig, dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let dir = dir.as_ref();
    let mut records = Vec::with_capacity(cfg.train + cfg.val);
    for (split, count) in [(Split::Train, cfg.train), (Split::Val, cfg.val)] {
        let sub = match split {
            Split::Train => "train",
            Split::Val => "val",
        };
        std::fs::create_dir_all(dir.join(sub)).map_err(|e| Error::io(dir.join(sub), e))?;
        let mut rng = stream_rng(cfg.seed, Stream::Synth, cfg.id as u64, split as u64);
        let mut samples: Vec<(Tensor<f32>, usize)> = Vec::with_capacity(count);
        match cfg.kind {
            SynthKind::BlobsImage | SynthKind::BlobsVideo => {
                for i in 0..count {
                    let label = i % cfg.classes;
                    let t = if cfg.kind == SynthKind::BlobsImage {
                        blobs_image(cfg, label, &mut rng)
                    } else {
                        blobs_video(cfg, label, &mut rng)
                    };
                    samples.push((t, label));
                }
            }
            SynthKind::FrameOrder => {
                for _ in 0..count / 2 {
                    let mut clip = frame_order_clip(cfg, &mut rng);
                    samples.push((stack(&clip, cfg.size), 0));
                    clip.reverse();
                    samples.push((stack(&clip, cfg.size), 1));
                }
            }
        }
        for (i, (tensor, label)) in samples.into_iter().enumerate() {
            let file = PathBuf::from(sub).join(format!("{i:06}.ivt"));
            save(&tensor, &dir.join(&file))?;
            records.push(Record {
                file,
                label,
                frames: (cfg.modality() == Modality::Video).then(|| cfg.stored_frames()),
                split,
            });
        }
    }
    let manifest = Manifest {
        dataset: cfg.spec(),
        records,
    };
    let path = dir.join(MANIFEST_FILE);
    manifest.save(&path)?;
    Ok(path)
}
