//! Building blocks of the frame-wise ViT. Every function here works on
//! `rows = B·T` independent token sequences; only [`token_shift`] and
//! [`temporal_mean_pool`] look across frames.

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{Bound, ParamId};
use crate::tensor::{Scalar, Tensor};

use super::config::LAYER_NORM_EPS;

#[derive(Clone, Debug, PartialEq)]
pub struct PatchEmbedding {
    /// `d × D` linear projection of flattened patches.
    pub proj: ParamId,
    /// `(N+1) × D`; row 0 belongs to the class token.
    pub pos: ParamId,
    /// Class token, `D`.
    pub cls: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

/// The key projection carries no bias: a key bias only adds a per-query
/// constant to the scores, which softmax cancels.
#[derive(Clone, Debug, PartialEq)]
pub struct Attention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
    pub heads: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderBlock {
    pub ln1: LayerNormParams,
    pub msa: Attention,
    pub ln2: LayerNormParams,
    pub fc1: Linear,
    pub fc2: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassifierHead {
    pub linear: Linear,
    pub classes: usize,
}

/// Token activations for `batch · frames` rows, frame-major within a clip.
#[derive(Clone, Copy, Debug)]
pub struct ActivationSet<'t, T> {
    /// `(rows, N+1, D)`; token 0 of every row is the class token.
    pub z: Var<'t, T>,
    pub batch: usize,
    pub frames: usize,
}

impl<'t, T: Scalar> ActivationSet<'t, T> {
    pub fn new(z: Var<'t, T>, batch: usize, frames: usize) -> Result<Self> {
        let shape = z.shape();
        if shape.len() != 3 || shape[0] != batch * frames || frames == 0 {
            return Err(Error::Contract(format!(
                "activation shape {shape:?} does not hold {batch}x{frames} rows"
            )));
        }
        Ok(ActivationSet { z, batch, frames })
    }

    pub fn rows(&self) -> usize {
        self.batch * self.frames
    }

    /// Class tokens regrouped per clip: `(B, T, D)`.
    pub fn class_tokens(&self) -> Result<Var<'t, T>> {
        let shape = self.z.shape();
        let dim = shape[2];
        self.z
            .slice(1, 0, 1)?
            .reshape(vec![self.batch, self.frames, dim])
    }
}

/// Split `(B', 3, H, W)` pixels into `(B', N, 3P²)` patches.
///
/// Patches are in raster order (row of patches, then column). Inside a
/// patch the vector is channel-major, then pixel row, then pixel column:
/// element `c·P² + py·P + px`.
pub fn patchify<T: Scalar>(x: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let &[b, c, h, w] = x.shape() else {
        return Err(Error::Config(format!(
            "patchify expects (B, 3, H, W), got {:?}",
            x.shape()
        )));
    };
    if c != 3 {
        return Err(Error::Config(format!("expected 3 channels, got {c}")));
    }
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "image {h}x{w} is not divisible by patch size {patch}"
        )));
    }
    let (ph, pw) = (h / patch, w / patch);
    let d = 3 * patch * patch;
    let src = x.data();
    let mut out = Vec::with_capacity(x.numel());
    for bi in 0..b {
        for py in 0..ph {
            for px in 0..pw {
                for ch in 0..3 {
                    for iy in 0..patch {
                        let row = ((bi * 3 + ch) * h + py * patch + iy) * w + px * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![b, ph * pw, d], out)
}

/// `x · W + b` over the last axis, for inputs of any leading shape.
pub fn linear<'t, T: Scalar>(x: Var<'t, T>, lin: &Linear, p: &Bound<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let din = *shape.last().ok_or_else(|| Error::Contract("linear on rank-0 input".into()))?;
    let w = p.var(lin.weight);
    let dout = w.shape()[1];
    let rows = shape.iter().product::<usize>() / din.max(1);
    let mut out_shape = shape.clone();
    *out_shape.last_mut().expect("rank checked") = dout;
    let y = x.reshape(vec![rows, din])?.matmul(w)?;
    let y = match lin.bias {
        Some(b) => y.add(p.var(b))?,
        None => y,
    };
    y.reshape(out_shape)
}

/// `z₀ = [c₀, x¹E, …, xᴺE] + E_pos` for every row.
pub fn embed<'t, T: Scalar>(
    tape: &'t Tape<T>,
    patches: &Tensor<T>,
    pe: &PatchEmbedding,
    p: &Bound<'t, T>,
    batch: usize,
    frames: usize,
) -> Result<ActivationSet<'t, T>> {
    let proj = p.var(pe.proj);
    let (d, dim) = (proj.shape()[0], proj.shape()[1]);
    let &[rows, n, pd] = patches.shape() else {
        return Err(Error::Config(format!(
            "patches must be (rows, N, d), got {:?}",
            patches.shape()
        )));
    };
    if pd != d {
        return Err(Error::Config(format!(
            "patch dimension {pd} does not match embedding input {d}"
        )));
    }
    let pos = p.var(pe.pos);
    if pos.shape() != [n + 1, dim] {
        return Err(Error::Config(format!(
            "position table {:?} does not fit {n} patches",
            pos.shape()
        )));
    }
    let x = tape.constant(patches.clone());
    let tokens = x
        .reshape(vec![rows * n, d])?
        .matmul(proj)?
        .reshape(vec![rows, n, dim])?;
    let cls = tape
        .constant(Tensor::zeros(vec![rows, 1, dim]))
        .add(p.var(pe.cls))?;
    let z = Var::concat(&[cls, tokens], 1)?.add(pos)?;
    ActivationSet::new(z, batch, frames)
}

/// Class-token channel shift between neighbouring frames.
///
/// For token 0 only: channels `[0, back)` of frame t take frame t−1's
/// values, channels `[back, back+forward)` take frame t+1's, the rest stay.
/// Missing neighbours at clip boundaries contribute zeros. Patch tokens are
/// untouched.
pub fn token_shift<'t, T: Scalar>(
    act: ActivationSet<'t, T>,
    back: usize,
    forward: usize,
) -> Result<ActivationSet<'t, T>> {
    let shape = act.z.shape();
    let (tokens, dim) = (shape[1], shape[2]);
    if back + forward > dim {
        return Err(Error::Config(format!(
            "shift amounts {back} + {forward} exceed dim {dim}"
        )));
    }
    if back + forward == 0 {
        return Ok(act);
    }
    let (b, t) = (act.batch, act.frames);
    let tape = act.z.tape();
    let z = act.z.reshape(vec![b, t, tokens, dim])?;
    let cls = z.slice(2, 0, 1)?;

    // Frame axis is 1, channel axis is 3.
    let mut parts = Vec::with_capacity(3);
    if back > 0 {
        let from_past = if t > 1 {
            cls.slice(3, 0, back)?.slice(1, 0, t - 1)?.zero_pad_assign(1, 1, t)?
        } else {
            tape.constant(Tensor::zeros(vec![b, t, 1, back]))
        };
        parts.push(from_past);
    }
    if forward > 0 {
        let from_future = if t > 1 {
            cls.slice(3, back, back + forward)?
                .slice(1, 1, t)?
                .zero_pad_assign(1, 0, t)?
        } else {
            tape.constant(Tensor::zeros(vec![b, t, 1, forward]))
        };
        parts.push(from_future);
    }
    if back + forward < dim {
        parts.push(cls.slice(3, back + forward, dim)?);
    }
    let shifted_cls = Var::concat(&parts, 3)?;
    let out = if tokens > 1 {
        Var::concat(&[shifted_cls, z.slice(2, 1, tokens)?], 2)?
    } else {
        shifted_cls
    };
    ActivationSet::new(out.reshape(vec![b * t, tokens, dim])?, b, t)
}

/// Multi-head scaled dot-product self-attention within each row.
pub fn self_attention<'t, T: Scalar>(
    x: Var<'t, T>,
    msa: &Attention,
    p: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    let shape = x.shape();
    let (rows, n, dim) = (shape[0], shape[1], shape[2]);
    let h = msa.heads;
    let dh = dim / h;
    let split = |v: Var<'t, T>, perm: &[usize], last: [usize; 2]| -> Result<Var<'t, T>> {
        v.reshape(vec![rows, n, h, dh])?
            .permute(perm)?
            .reshape(vec![rows * h, last[0], last[1]])
    };
    let q = split(linear(x, &msa.query, p)?, &[0, 2, 1, 3], [n, dh])?;
    let k = split(linear(x, &msa.key, p)?, &[0, 2, 3, 1], [dh, n])?;
    let v = split(linear(x, &msa.value, p)?, &[0, 2, 1, 3], [n, dh])?;
    let scale = T::one() / T::from_usize(dh).expect("head dim fits").sqrt();
    let attn = q.matmul(k)?.scale(scale).softmax(2)?;
    let mixed = attn
        .matmul(v)?
        .reshape(vec![rows, h, n, dh])?
        .permute(&[0, 2, 1, 3])?
        .reshape(vec![rows, n, dim])?;
    linear(mixed, &msa.out, p)
}

fn layer_norm<'t, T: Scalar>(
    x: Var<'t, T>,
    ln: &LayerNormParams,
    p: &Bound<'t, T>,
) -> Result<Var<'t, T>> {
    x.layer_norm(p.var(ln.gamma), p.var(ln.beta), T::of_f64(LAYER_NORM_EPS))
}

/// One pre-norm encoder block. With `shift = Some((back, forward))` the
/// class-token shift is applied to the residual stream between the
/// attention and MLP sub-layers, so the class token carries this block's
/// attention output to the neighbouring frames.
pub fn encoder_block<'t, T: Scalar>(
    act: ActivationSet<'t, T>,
    blk: &EncoderBlock,
    p: &Bound<'t, T>,
    shift: Option<(usize, usize)>,
) -> Result<ActivationSet<'t, T>> {
    let (batch, frames) = (act.batch, act.frames);
    let z = act.z;
    let z1 = self_attention(layer_norm(z, &blk.ln1, p)?, &blk.msa, p)?.add(z)?;
    let z1 = match shift {
        Some((back, forward)) => token_shift(ActivationSet::new(z1, batch, frames)?, back, forward)?.z,
        None => z1,
    };
    let hidden = linear(layer_norm(z1, &blk.ln2, p)?, &blk.fc1, p)?.gelu();
    let z2 = linear(hidden, &blk.fc2, p)?.add(z1)?;
    ActivationSet::new(z2, batch, frames)
}

/// Mean over the frame axis of `(B, T, D)` class tokens.
pub fn temporal_mean_pool<'t, T: Scalar>(class_tokens: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = class_tokens.shape();
    if shape.len() != 3 || shape[1] == 0 {
        return Err(Error::Contract(format!(
            "temporal_mean_pool expects (B, T>=1, D), got {shape:?}"
        )));
    }
    class_tokens.mean_axis(1)
}
