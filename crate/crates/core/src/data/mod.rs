//! Dataset manifests, synthetic datasets, augmentation and batch assembly.

pub mod augment;
mod batch;
mod manifest;
pub mod rng;
mod synth;

pub use augment::{augment_image, sample_clip, AugmentConfig};
pub use batch::{assemble_batch, Mode, SampleBatch};
pub use manifest::{load_manifest, read_tensor_shape, Dataset, DatasetSpec, Manifest, Modality, Record, Split};
pub use synth::{synth_dataset, SynthConfig, SynthKind, MANIFEST_FILE};
