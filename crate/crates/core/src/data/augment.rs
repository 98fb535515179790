//! Training augmentation, evaluation preprocessing and clip sampling.
//!
//! Resizing is bilinear with half-pixel centres (`align_corners = false`):
//! output pixel `i` reads source coordinate `offset + (i + 0.5)·scale − 0.5`,
//! clamped to the source region, interpolating its two neighbours per axis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Crop attempts before falling back to a centre crop.
pub const CROP_ATTEMPTS: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    /// Crop area as a fraction of the image, sampled uniformly.
    pub area: [f64; 2],
    /// Crop width / height, sampled uniformly.
    pub aspect: [f64; 2],
    /// Side of the square network input.
    pub output_size: usize,
    pub hflip_prob: f64,
    /// Video frames are resized so their short edge is uniform in this
    /// inclusive range, then randomly cropped to `output_size`.
    pub short_edge: [usize; 2],
    /// Length of the window clips are sampled from.
    pub clip_seconds: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig::for_output(32)
    }
}

impl AugmentConfig {
    /// Standard ranges with the video short-edge range scaled from
    /// [224, 320] to the output size.
    pub fn for_output(size: usize) -> Self {
        AugmentConfig {
            area: [0.08, 1.0],
            aspect: [3.0 / 4.0, 4.0 / 3.0],
            output_size: size,
            hflip_prob: 0.5,
            short_edge: [size, (size as f64 * 320.0 / 224.0).round() as usize],
            clip_seconds: 2.67,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let [a0, a1] = self.area;
        let [r0, r1] = self.aspect;
        let [s0, s1] = self.short_edge;
        if !(0.0 < a0 && a0 <= a1 && a1 <= 1.0) {
            return Err(Error::Config(format!("crop area range {:?} invalid", self.area)));
        }
        if !(0.0 < r0 && r0 <= r1 && r1.is_finite()) {
            return Err(Error::Config(format!("aspect range {:?} invalid", self.aspect)));
        }
        if self.output_size == 0 || s0 > s1 || s0 < self.output_size {
            return Err(Error::Config(format!(
                "short-edge range {:?} must be ordered and start at or above output size {}",
                self.short_edge, self.output_size
            )));
        }
        if !(0.0..=1.0).contains(&self.hflip_prob) || !(self.clip_seconds > 0.0) {
            return Err(Error::Config("hflip_prob must be in [0, 1] and clip_seconds positive".into()));
        }
        Ok(())
    }
}

/// Integer crop rectangle inside an image.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CropBox {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

fn uniform(rng: &mut impl Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..hi)
    }
}

/// Random-resized-crop box: area fraction and aspect uniform, retried
/// while the box does not fit, then a centre crop with the aspect clamped
/// into range.
pub fn sample_crop(height: usize, width: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> CropBox {
    let area = (height * width) as f64;
    for _ in 0..CROP_ATTEMPTS {
        let target = area * uniform(rng, cfg.area);
        let aspect = uniform(rng, cfg.aspect);
        let w = (target * aspect).sqrt().round() as usize;
        let h = (target / aspect).sqrt().round() as usize;
        if (1..=width).contains(&w) && (1..=height).contains(&h) {
            return CropBox {
                top: rng.random_range(0..=height - h),
                left: rng.random_range(0..=width - w),
                height: h,
                width: w,
            };
        }
    }
    center_crop(height, width, cfg.aspect)
}

/// Largest centred box whose aspect lies in `aspect`.
pub fn center_crop(height: usize, width: usize, aspect: [f64; 2]) -> CropBox {
    let ratio = width as f64 / height as f64;
    let (h, w) = if ratio < aspect[0] {
        (((width as f64 / aspect[0]).round() as usize).clamp(1, height), width)
    } else if ratio > aspect[1] {
        (height, ((height as f64 * aspect[1]).round() as usize).clamp(1, width))
    } else {
        (height, width)
    };
    CropBox {
        top: (height - h) / 2,
        left: (width - w) / 2,
        height: h,
        width: w,
    }
}

/// Source sampling along one axis: coordinate `offset + (i + 0.5)·scale − 0.5`,
/// clamped to `[lo, hi]`.
#[derive(Clone, Copy, Debug)]
struct Axis {
    offset: f64,
    scale: f64,
    lo: usize,
    hi: usize,
}

impl Axis {
    /// Resize the source span `[start, start + len)` to `out` samples.
    fn crop(start: usize, len: usize, out: usize) -> Self {
        Axis {
            offset: start as f64,
            scale: len as f64 / out as f64,
            lo: start,
            hi: start + len - 1,
        }
    }

    /// Resize the full extent `src` to `resized`, then keep samples
    /// `[start, start + out)`.
    fn resize_then_crop(src: usize, resized: usize, start: usize) -> Self {
        let scale = src as f64 / resized as f64;
        Axis {
            offset: start as f64 * scale,
            scale,
            lo: 0,
            hi: src - 1,
        }
    }

    /// (lower index, upper index, weight of upper) for output index `i`.
    fn taps(&self, i: usize) -> (usize, usize, f32) {
        let x = (self.offset + (i as f64 + 0.5) * self.scale - 0.5)
            .clamp(self.lo as f64, self.hi as f64);
        let i0 = x.floor() as usize;
        let i1 = (i0 + 1).min(self.hi);
        (i0, i1, (x - i0 as f64) as f32)
    }
}

fn resample(img: &Tensor<f32>, ys: Axis, xs: Axis, out: usize, flip: bool) -> Tensor<f32> {
    let (c, w) = (img.shape()[0], img.shape()[2]);
    let h = img.shape()[1];
    let src = img.data();
    let rows: Vec<_> = (0..out).map(|i| ys.taps(i)).collect();
    let cols: Vec<_> = (0..out).map(|j| xs.taps(j)).collect();
    let mut data = Vec::with_capacity(c * out * out);
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &rows {
            for j in 0..out {
                let (x0, x1, fx) = cols[if flip { out - 1 - j } else { j }];
                let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                data.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new(vec![c, out, out], data).expect("sized above")
}

fn check_image(img: &Tensor<f32>) -> Result<(usize, usize)> {
    match *img.shape() {
        [3, h, w] if h > 0 && w > 0 => Ok((h, w)),
        _ => Err(Error::Contract(format!("expected a (3, H, W) image, got {:?}", img.shape()))),
    }
}

/// Crop `bx` out of `img` and bilinearly resize it to `size × size`.
pub fn crop_resize(img: &Tensor<f32>, bx: CropBox, size: usize, flip: bool) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    if bx.height == 0 || bx.width == 0 || bx.top + bx.height > h || bx.left + bx.width > w {
        return Err(Error::Contract(format!("crop {bx:?} outside {h}x{w} image")));
    }
    Ok(resample(
        img,
        Axis::crop(bx.top, bx.height, size),
        Axis::crop(bx.left, bx.width, size),
        size,
        flip,
    ))
}

/// Mirror the last axis.
pub fn hflip(img: &Tensor<f32>) -> Tensor<f32> {
    let w = *img.shape().last().unwrap_or(&1);
    let mut data = img.data().to_vec();
    for row in data.chunks_mut(w.max(1)) {
        row.reverse();
    }
    Tensor::new(img.shape().to_vec(), data).expect("same shape")
}

/// Random resized crop to `output_size`, then horizontal flip with
/// probability `hflip_prob`.
pub fn augment_image(img: &Tensor<f32>, cfg: &AugmentConfig, rng: &mut impl Rng) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    let bx = sample_crop(h, w, cfg, rng);
    let flip = rng.random_bool(cfg.hflip_prob);
    crop_resize(img, bx, cfg.output_size, flip)
}

/// One spatial augmentation shared by every frame of a clip.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipTransform {
    /// Frame size after the short-edge resize.
    pub resized: (usize, usize),
    /// Top-left of the output window in resized coordinates.
    pub top: usize,
    pub left: usize,
    pub size: usize,
    pub flip: bool,
}

fn resized_dims(h: usize, w: usize, short: usize) -> (usize, usize) {
    let scale = short as f64 / h.min(w) as f64;
    let rh = ((h as f64 * scale).round() as usize).max(short);
    let rw = ((w as f64 * scale).round() as usize).max(short);
    if h <= w {
        (short, rw)
    } else {
        (rh, short)
    }
}

impl ClipTransform {
    /// Short edge uniform in `cfg.short_edge`, random window, random flip.
    pub fn sample(h: usize, w: usize, cfg: &AugmentConfig, rng: &mut impl Rng) -> Self {
        let short = rng.random_range(cfg.short_edge[0]..=cfg.short_edge[1]);
        let (rh, rw) = resized_dims(h, w, short);
        let size = cfg.output_size;
        ClipTransform {
            resized: (rh, rw),
            top: rng.random_range(0..=rh - size),
            left: rng.random_range(0..=rw - size),
            size,
            flip: rng.random_bool(cfg.hflip_prob),
        }
    }

    /// Short edge resized to `size`, centred window, no flip.
    pub fn center(h: usize, w: usize, size: usize) -> Self {
        let (rh, rw) = resized_dims(h, w, size);
        ClipTransform {
            resized: (rh, rw),
            top: (rh - size) / 2,
            left: (rw - size) / 2,
            size,
            flip: false,
        }
    }

    pub fn apply(&self, frame: &Tensor<f32>) -> Result<Tensor<f32>> {
        let (h, w) = check_image(frame)?;
        Ok(resample(
            frame,
            Axis::resize_then_crop(h, self.resized.0, self.top),
            Axis::resize_then_crop(w, self.resized.1, self.left),
            self.size,
            self.flip,
        ))
    }
}

/// Evaluation preprocessing for images: resize the whole image.
pub fn eval_image(img: &Tensor<f32>, size: usize) -> Result<Tensor<f32>> {
    let (h, w) = check_image(img)?;
    crop_resize(img, CropBox { top: 0, left: 0, height: h, width: w }, size, false)
}

/// Frames covered by the sampling window: `round(fps · seconds)` clamped
/// to `[1, frames]`.
pub fn clip_window(frames: usize, fps: f64, seconds: f64) -> usize {
    ((fps * seconds).round() as usize).clamp(1, frames.max(1))
}

/// `len` indices spread uniformly over the window starting at `start`;
/// windows shorter than `len` are padded with their last frame.
pub fn clip_indices(start: usize, window: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|k| {
            if window < len {
                start + k.min(window - 1)
            } else {
                start + k * window / len
            }
        })
        .collect()
}

/// Frame indices of a training clip: a random window of the video.
pub fn sample_clip(frames: usize, len: usize, fps: f64, seconds: f64, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::Contract("cannot sample a clip from an empty video".into()));
    }
    let window = clip_window(frames, fps, seconds);
    let start = rng.random_range(0..=frames - window);
    Ok(clip_indices(start, window, len))
}

/// Frame indices of an evaluation clip: the centred window.
pub fn center_clip(frames: usize, len: usize, fps: f64, seconds: f64) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::Contract("cannot sample a clip from an empty video".into()));
    }
    let window = clip_window(frames, fps, seconds);
    Ok(clip_indices((frames - window) / 2, window, len))
}
