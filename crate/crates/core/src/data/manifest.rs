//! Dataset manifests.
//!
//! A manifest is a JSON document next to its tensor files:
//!
//! ```json
//! {
//!   "dataset": {"id": 0, "name": "blobs-a", "modality": "image",
//!               "num_classes": 4, "frames_per_clip": 1,
//!               "height": 16, "width": 16, "fps": 30.0},
//!   "records": [{"file": "train/000000.ivt", "label": 2, "split": "train"},
//!               {"file": "val/000000.ivt", "label": 0, "frames": 8, "split": "val"}]
//! }
//! ```
//!
//! Image records hold a `(3, H, W)` IVT1 tensor, video records
//! `(frames, 3, H, W)`. Paths are relative to the manifest's directory.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{read_shape, read_tensor};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Image,
    Video,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Val,
}

fn default_fps() -> f64 {
    30.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSpec {
    pub id: usize,
    pub name: String,
    pub modality: Modality,
    pub num_classes: usize,
    /// Frames per sampled clip; 1 for images.
    pub frames_per_clip: usize,
    /// Native (stored) frame size.
    pub height: usize,
    pub width: usize,
    #[serde(default = "default_fps")]
    pub fps: f64,
    /// Where the manifest was read from; filled in by [`load_manifest`].
    #[serde(skip)]
    pub manifest: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub file: PathBuf,
    pub label: usize,
    /// Stored frame count; videos only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frames: Option<usize>,
    #[serde(default)]
    pub split: Split,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset: DatasetSpec,
    pub records: Vec<Record>,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        let image = self.modality == Modality::Image;
        if image != (self.frames_per_clip == 1) || self.frames_per_clip == 0 {
            return Err(Error::Config(format!(
                "dataset `{}`: frames_per_clip must be 1 exactly for images, got {} for {:?}",
                self.name, self.frames_per_clip, self.modality
            )));
        }
        if self.num_classes == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config(format!(
                "dataset `{}`: classes and frame size must be positive",
                self.name
            )));
        }
        if !(self.fps > 0.0) {
            return Err(Error::Config(format!("dataset `{}`: fps must be positive", self.name)));
        }
        Ok(())
    }

    /// Stored tensor shape of a record with `frames` frames.
    pub fn record_shape(&self, frames: Option<usize>) -> Vec<usize> {
        match (self.modality, frames) {
            (Modality::Image, _) => vec![3, self.height, self.width],
            (Modality::Video, f) => vec![f.unwrap_or(0), 3, self.height, self.width],
        }
    }
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }
}

/// Read only the shape from an IVT1 file.
pub fn read_tensor_shape(path: &Path) -> Result<Vec<usize>> {
    let mut r = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
    read_shape(&mut r)
}

/// Parse and validate a manifest: labels in range, files present, stored
/// shapes as declared.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<(DatasetSpec, Manifest)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        record: None,
        reason: e.to_string(),
    })?;
    let bad = |record: usize, reason: String| Error::Manifest {
        path: path.to_path_buf(),
        record: Some(record),
        reason,
    };
    manifest.dataset.validate().map_err(|e| Error::Manifest {
        path: path.to_path_buf(),
        record: None,
        reason: e.to_string(),
    })?;
    manifest.dataset.manifest = path.to_path_buf();
    let spec = &manifest.dataset;
    let root = path.parent().unwrap_or(Path::new("."));
    for (i, rec) in manifest.records.iter().enumerate() {
        if rec.label >= spec.num_classes {
            return Err(bad(
                i,
                format!("label {} out of range for {} classes", rec.label, spec.num_classes),
            ));
        }
        match (spec.modality, rec.frames) {
            (Modality::Video, None | Some(0)) => {
                return Err(bad(i, "video record needs a positive frame count".into()))
            }
            (Modality::Image, Some(_)) => {
                return Err(bad(i, "image record must not declare frames".into()))
            }
            _ => {}
        }
        let file = root.join(&rec.file);
        if !file.is_file() {
            return Err(bad(i, format!("missing tensor file {}", file.display())));
        }
        let shape = read_tensor_shape(&file).map_err(|e| bad(i, e.to_string()))?;
        let want = spec.record_shape(rec.frames);
        if shape != want {
            return Err(bad(i, format!("stored shape {shape:?}, declared {want:?}")));
        }
    }
    Ok((manifest.dataset.clone(), manifest))
}

/// A validated manifest with every record decoded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub spec: DatasetSpec,
    pub manifest: Manifest,
    tensors: Vec<Tensor<f32>>,
}

impl Dataset {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let (spec, manifest) = load_manifest(path)?;
        let root = spec.manifest.parent().unwrap_or(Path::new(".")).to_path_buf();
        let tensors = manifest
            .records
            .iter()
            .enumerate()
            .map(|(i, rec)| {
                let file = root.join(&rec.file);
                let mut r = BufReader::new(File::open(&file).map_err(|e| Error::io(&file, e))?);
                read_tensor(&mut r).map_err(|e| Error::Manifest {
                    path: spec.manifest.clone(),
                    record: Some(i),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<_>>()?;
        Ok(Dataset {
            spec,
            manifest,
            tensors,
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn tensor(&self, index: usize) -> &Tensor<f32> {
        &self.tensors[index]
    }

    pub fn label(&self, index: usize) -> usize {
        self.manifest.records[index].label
    }

    pub fn split(&self, split: Split) -> Vec<usize> {
        self.manifest.indices(split)
    }
}
