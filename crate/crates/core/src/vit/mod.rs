//! Frame-wise Vision Transformer serving image and video batches through
//! one code path, with optional class-token temporal shift and one
//! classifier head per dataset.

mod checkpoint;
mod config;
mod layers;
mod model;

pub use checkpoint::{load_checkpoint, load_checkpoint_as, save_checkpoint};
pub use config::{ShiftVariant, VitConfig, LAYER_NORM_EPS};
pub use layers::{
    embed, encoder_block, linear, patchify, self_attention, temporal_mean_pool, token_shift,
    ActivationSet, Attention, ClassifierHead, EncoderBlock, LayerNormParams, Linear,
    PatchEmbedding,
};
pub use model::{expected_parameters, VitModel};
