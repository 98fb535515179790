use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::params::{trunc_normal, Bound, ParamStore};
use crate::tensor::{Scalar, Tensor};

use super::config::{ShiftVariant, VitConfig};
use super::layers::{
    embed, encoder_block, linear, patchify, temporal_mean_pool, ActivationSet, Attention,
    ClassifierHead, EncoderBlock, LayerNormParams, Linear, PatchEmbedding,
};

const INIT_STD: f64 = 0.02;

/// The shared backbone plus one classifier head per dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct VitModel<T> {
    config: VitConfig,
    params: ParamStore<T>,
    embedding: PatchEmbedding,
    blocks: Vec<EncoderBlock>,
    heads: Vec<ClassifierHead>,
}

/// How a parameter is initialised.
#[derive(Clone, Copy)]
enum Init {
    Weight,
    Zeros,
    Ones,
}

/// Every parameter a config implies, in store order.
fn layout(cfg: &VitConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (d, dim, n, hid) = (cfg.patch_dim(), cfg.dim, cfg.num_patches(), cfg.mlp_hidden);
    let mut out = vec![
        ("embed.proj".to_string(), vec![d, dim], Init::Weight),
        ("embed.pos".to_string(), vec![n + 1, dim], Init::Zeros),
        ("embed.cls".to_string(), vec![dim], Init::Zeros),
    ];
    let lin = |out: &mut Vec<_>, prefix: String, din: usize, dout: usize| {
        out.push((format!("{prefix}.weight"), vec![din, dout], Init::Weight));
        out.push((format!("{prefix}.bias"), vec![dout], Init::Zeros));
    };
    for l in 0..cfg.depth {
        let b = format!("block{l}");
        out.push((format!("{b}.ln1.gamma"), vec![dim], Init::Ones));
        out.push((format!("{b}.ln1.beta"), vec![dim], Init::Zeros));
        lin(&mut out, format!("{b}.msa.wq"), dim, dim);
        out.push((format!("{b}.msa.wk.weight"), vec![dim, dim], Init::Weight));
        lin(&mut out, format!("{b}.msa.wv"), dim, dim);
        lin(&mut out, format!("{b}.msa.wo"), dim, dim);
        out.push((format!("{b}.ln2.gamma"), vec![dim], Init::Ones));
        out.push((format!("{b}.ln2.beta"), vec![dim], Init::Zeros));
        lin(&mut out, format!("{b}.mlp.fc1"), dim, hid);
        lin(&mut out, format!("{b}.mlp.fc2"), hid, dim);
    }
    for (i, &c) in cfg.dataset_heads.iter().enumerate() {
        lin(&mut out, format!("head{i}"), dim, c);
    }
    out
}

/// Names and shapes a config expects, in store order.
pub fn expected_parameters(cfg: &VitConfig) -> Vec<(String, Vec<usize>)> {
    layout(cfg).into_iter().map(|(n, s, _)| (n, s)).collect()
}

impl<T: Scalar> VitModel<T> {
    /// Truncated-normal (σ = 0.02) weights; zero biases, class token and
    /// position table; unit LayerNorm gains.
    pub fn init(config: VitConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        for (name, shape, init) in layout(&config) {
            let value = match init {
                Init::Weight => trunc_normal(&shape, INIT_STD, rng),
                Init::Zeros => Tensor::zeros(shape),
                Init::Ones => Tensor::ones(shape),
            };
            store.insert(name, value)?;
        }
        Self::from_store(config, store)
    }

    /// Wrap an existing store, checking every name and shape against the
    /// config. The first offending parameter is named in the error.
    pub fn from_store(config: VitConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let expected = expected_parameters(&config);
        for (i, (name, shape)) in expected.iter().enumerate() {
            let Some(p) = params.iter().nth(i) else {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: "missing".into(),
                });
            };
            if &p.name != name {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: format!("found `{}` in its place", p.name),
                });
            }
            if p.value.shape() != shape.as_slice() {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: format!("shape {:?}, expected {:?}", p.value.shape(), shape),
                });
            }
        }
        if params.len() > expected.len() {
            let extra = params.iter().nth(expected.len()).expect("length checked");
            return Err(Error::Checkpoint {
                param: extra.name.clone(),
                reason: "not part of this configuration".into(),
            });
        }
        let id = |name: &str| params.id_of(name).expect("layout verified");
        let lin = |prefix: &str| Linear {
            weight: id(&format!("{prefix}.weight")),
            bias: Some(id(&format!("{prefix}.bias"))),
        };
        let embedding = PatchEmbedding {
            proj: id("embed.proj"),
            pos: id("embed.pos"),
            cls: id("embed.cls"),
        };
        let blocks = (0..config.depth)
            .map(|l| {
                let b = format!("block{l}");
                EncoderBlock {
                    ln1: LayerNormParams {
                        gamma: id(&format!("{b}.ln1.gamma")),
                        beta: id(&format!("{b}.ln1.beta")),
                    },
                    msa: Attention {
                        query: lin(&format!("{b}.msa.wq")),
                        key: Linear {
                            weight: id(&format!("{b}.msa.wk.weight")),
                            bias: None,
                        },
                        value: lin(&format!("{b}.msa.wv")),
                        out: lin(&format!("{b}.msa.wo")),
                        heads: config.heads,
                    },
                    ln2: LayerNormParams {
                        gamma: id(&format!("{b}.ln2.gamma")),
                        beta: id(&format!("{b}.ln2.beta")),
                    },
                    fc1: lin(&format!("{b}.mlp.fc1")),
                    fc2: lin(&format!("{b}.mlp.fc2")),
                }
            })
            .collect();
        let heads = config
            .dataset_heads
            .iter()
            .enumerate()
            .map(|(i, &classes)| ClassifierHead {
                linear: lin(&format!("head{i}")),
                classes,
            })
            .collect();
        Ok(VitModel {
            config,
            params,
            embedding,
            blocks,
            heads,
        })
    }

    pub fn config(&self) -> &VitConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    /// Toggle temporal shift; it owns no parameters.
    pub fn set_shift(&mut self, shift: ShiftVariant) {
        self.config.shift = shift;
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn cast<U: Scalar>(&self) -> VitModel<U> {
        let mut store = ParamStore::new();
        for p in self.params.iter() {
            store
                .insert(p.name.clone(), p.value.cast())
                .expect("names already unique");
        }
        VitModel::from_store(self.config.clone(), store).expect("same layout")
    }

    fn head(&self, head: usize) -> Result<&ClassifierHead> {
        self.heads.get(head).ok_or_else(|| {
            Error::Config(format!(
                "unknown head {head}; model has {} heads",
                self.heads.len()
            ))
        })
    }

    /// Fold `(B, 3, H, W)` or `(B, T, 3, H, W)` into frames; returns
    /// `(frames-as-images, B, T)`.
    fn fold_frames(&self, pixels: &Tensor<T>) -> Result<(Tensor<T>, usize, usize)> {
        let (h, w) = (self.config.height, self.config.width);
        match *pixels.shape() {
            [b, 3, ph, pw] if (ph, pw) == (h, w) => Ok((pixels.clone(), b, 1)),
            [b, t, 3, ph, pw] if (ph, pw) == (h, w) && t > 0 => {
                Ok((pixels.reshape(vec![b * t, 3, h, w])?, b, t))
            }
            _ => Err(Error::Config(format!(
                "expected (B, 3, {h}, {w}) or (B, T, 3, {h}, {w}) pixels, got {:?}",
                pixels.shape()
            ))),
        }
    }

    /// Run the backbone and return the final activations (before pooling).
    pub fn encode<'t>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        pixels: &Tensor<T>,
    ) -> Result<ActivationSet<'t, T>> {
        let (frames, b, t) = self.fold_frames(pixels)?;
        let patches = patchify(&frames, self.config.patch)?;
        let mut act = embed(tape, &patches, &self.embedding, p, b, t)?;
        let shift = self.config.shift_enabled().then(|| self.config.shift_amounts());
        for blk in &self.blocks {
            act = encoder_block(act, blk, p, shift)?;
        }
        Ok(act)
    }

    /// Raw logits `(B, C_head)`. Images are clips of one frame, so both
    /// modalities share every step: encode, take class tokens as
    /// `(B, T, D)`, mean over frames, apply the head.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape<T>,
        p: &Bound<'t, T>,
        pixels: &Tensor<T>,
        head: usize,
    ) -> Result<Var<'t, T>> {
        let head = self.head(head)?;
        let act = self.encode(tape, p, pixels)?;
        let pooled = temporal_mean_pool(act.class_tokens()?)?;
        linear(pooled, &head.linear, p)
    }

    /// Forward pass on a private tape, returning logit values.
    pub fn logits(&self, pixels: &Tensor<T>, head: usize) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(self.forward(&tape, &bound, pixels, head)?.value())
    }

    /// Pre-pooling class tokens `(B, T, D)` on a private tape.
    pub fn class_tokens(&self, pixels: &Tensor<T>) -> Result<Tensor<T>> {
        let tape = Tape::new();
        let bound = self.params.bind(&tape);
        Ok(self.encode(&tape, &bound, pixels)?.class_tokens()?.value())
    }
}
