use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Temporal modelling inside the encoder blocks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShiftVariant {
    /// Plain frame-wise ViT with late fusion only.
    None,
    /// Class-token channel shift between neighbouring frames.
    #[default]
    TokenShift,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VitConfig {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    #[serde(default)]
    pub shift: ShiftVariant,
    /// Channels taken from the previous frame; `dim / 8` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_back: Option<usize>,
    /// Channels taken from the next frame; `dim / 8` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift_forward: Option<usize>,
    /// Class count per dataset head, indexed by dataset id.
    #[serde(default)]
    pub dataset_heads: Vec<usize>,
}

impl VitConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("height", self.height),
            ("width", self.width),
            ("patch", self.patch),
            ("dim", self.dim),
            ("depth", self.depth),
            ("heads", self.heads),
            ("mlp_hidden", self.mlp_hidden),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch size {}",
                self.height, self.width, self.patch
            )));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "dim {} is not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        let (back, fwd) = self.shift_amounts();
        if back + fwd > self.dim {
            return Err(Error::Config(format!(
                "shift amounts {back} + {fwd} exceed dim {}",
                self.dim
            )));
        }
        if self.dataset_heads.is_empty() {
            return Err(Error::Config("at least one dataset head is required".into()));
        }
        if let Some(i) = self.dataset_heads.iter().position(|&c| c == 0) {
            return Err(Error::Config(format!("head {i} has zero classes")));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch) * (self.width / self.patch)
    }

    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    pub fn shift_amounts(&self) -> (usize, usize) {
        let default = self.dim / 8;
        (
            self.shift_back.unwrap_or(default),
            self.shift_forward.unwrap_or(default),
        )
    }

    pub fn shift_enabled(&self) -> bool {
        self.shift == ShiftVariant::TokenShift
    }

    /// Full temporal interaction needs at least as many blocks as frames.
    pub fn warn_if_shallow(&self, frames: usize) {
        if self.shift_enabled() && frames > self.depth {
            log::warn!(
                "clip length {frames} exceeds depth {}: the class-token shift cannot span the whole clip",
                self.depth
            );
        }
    }
}
