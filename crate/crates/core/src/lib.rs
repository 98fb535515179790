//! Joint image/video classification with a frame-wise Vision Transformer.
//!
//! * [`tensor`] / [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`vit`]: patch embedding, encoder blocks with class-token temporal
//!   shift, temporal mean pooling and per-dataset heads.
//! * [`data`]: manifests, synthetic datasets, augmentation and batching.
//! * [`train`]: optimizers, loss weighting (static / DWA / DTP) and the
//!   fixed-order multi-dataset training loop.

// Negated float comparisons are used deliberately so NaN fails checks.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::should_implement_trait)]

pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod params;
pub mod tensor;
pub mod train;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::{DType, Scalar, Tensor};
