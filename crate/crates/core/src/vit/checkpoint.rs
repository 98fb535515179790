//! Checkpoint files.
//!
//! Layout: magic `IVCK`, little-endian `u32` format version, `u32` length
//! of a JSON manifest, the manifest itself (`{"config": .., "params":
//! [{"name", "shape"}, ..]}`), then one IVT1 tensor record per parameter
//! in manifest order.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::VitConfig;
use super::model::{expected_parameters, VitModel};
use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{read_tensor, write_tensor, Scalar};

const MAGIC: &[u8; 4] = b"IVCK";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Entry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    config: VitConfig,
    params: Vec<Entry>,
}

pub fn save_checkpoint<T: Scalar>(model: &VitModel<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let manifest = Manifest {
        config: model.config().clone(),
        params: model
            .params()
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
            })
            .collect(),
    };
    let json = serde_json::to_vec(&manifest)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut header = Vec::with_capacity(12);
    header.extend_from_slice(MAGIC);
    header.extend_from_slice(&VERSION.to_le_bytes());
    header.extend_from_slice(&(json.len() as u32).to_le_bytes());
    w.write_all(&header).map_err(|e| Error::io(path, e))?;
    w.write_all(&json).map_err(|e| Error::io(path, e))?;
    for p in model.params().iter() {
        write_tensor(&mut w, &p.value)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn header_error(reason: impl Into<String>) -> Error {
    Error::Checkpoint {
        param: "<header>".into(),
        reason: reason.into(),
    }
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)
        .map_err(|_| header_error("truncated header"))?;
    Ok(u32::from_le_bytes(b))
}

/// Load a checkpoint using the configuration stored inside it.
pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<VitModel<T>> {
    load(path.as_ref(), None)
}

/// Load a checkpoint that must match `expected`; a mismatch names the
/// first offending parameter.
pub fn load_checkpoint_as<T: Scalar>(
    path: impl AsRef<Path>,
    expected: &VitConfig,
) -> Result<VitModel<T>> {
    load(path.as_ref(), Some(expected))
}

fn load<T: Scalar>(path: &Path, expected: Option<&VitConfig>) -> Result<VitModel<T>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|_| header_error("truncated header"))?;
    if &magic != MAGIC {
        return Err(header_error(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != VERSION {
        return Err(header_error(format!("unsupported version {version}")));
    }
    let len = read_u32(&mut r)? as usize;
    let mut json = Vec::new();
    (&mut r)
        .take(len as u64)
        .read_to_end(&mut json)
        .map_err(|e| Error::io(path, e))?;
    if json.len() != len {
        return Err(header_error("truncated manifest"));
    }
    let manifest: Manifest =
        serde_json::from_slice(&json).map_err(|e| header_error(format!("manifest: {e}")))?;

    let config = expected.cloned().unwrap_or(manifest.config);
    config.validate()?;
    let wanted = expected_parameters(&config);
    for (i, (name, shape)) in wanted.iter().enumerate() {
        match manifest.params.get(i) {
            Some(e) if &e.name == name && &e.shape == shape => {}
            Some(e) if &e.name == name => {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: format!("stored shape {:?}, configuration expects {:?}", e.shape, shape),
                })
            }
            Some(e) => {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: format!("stored `{}` in its place", e.name),
                })
            }
            None => {
                return Err(Error::Checkpoint {
                    param: name.clone(),
                    reason: "missing from checkpoint".into(),
                })
            }
        }
    }
    if let Some(extra) = manifest.params.get(wanted.len()) {
        return Err(Error::Checkpoint {
            param: extra.name.clone(),
            reason: "not part of this configuration".into(),
        });
    }

    let mut store = ParamStore::new();
    for (name, shape) in wanted {
        let value = read_tensor::<T>(&mut r).map_err(|e| Error::Checkpoint {
            param: name.clone(),
            reason: e.to_string(),
        })?;
        if value.shape() != shape.as_slice() {
            return Err(Error::Checkpoint {
                param: name,
                reason: format!("record shape {:?}, expected {:?}", value.shape(), shape),
            });
        }
        store.insert(name, value)?;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::io(path, e))? != 0 {
        return Err(header_error("trailing bytes after last record"));
    }
    VitModel::from_store(config, store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vit::ShiftVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> VitConfig {
        VitConfig {
            height: 8,
            width: 8,
            patch: 4,
            dim: 8,
            depth: 2,
            heads: 2,
            mlp_hidden: 16,
            shift: ShiftVariant::TokenShift,
            shift_back: None,
            shift_forward: None,
            dataset_heads: vec![3, 5],
        }
    }

    #[test]
    fn roundtrip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ivck");
        let m = VitModel::<f32>::init(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let back: VitModel<f32> = load_checkpoint(&path).unwrap();
        for (a, b) in m.params().iter().zip(back.params().iter()) {
            assert_eq!(a.name, b.name);
            let same = a.value.data().iter().zip(b.value.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{}", a.name);
        }
        assert_eq!(back.config(), m.config());
    }

    #[test]
    fn mismatched_config_names_parameter() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ivck");
        let m = VitModel::<f32>::init(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let other = VitConfig {
            dataset_heads: vec![3, 7],
            ..cfg()
        };
        let err = load_checkpoint_as::<f32>(&path, &other).unwrap_err();
        assert!(err.to_string().contains("head1.weight"), "{err}");
    }

    #[test]
    fn truncated_file_is_structured_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ivck");
        let m = VitModel::<f32>::init(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        save_checkpoint(&m, &path).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = load_checkpoint::<f32>(&path).unwrap_err();
        assert!(matches!(err, Error::Checkpoint { ref param, .. } if param == "head1.bias"), "{err}");
        std::fs::write(&path, &bytes[..6]).unwrap();
        assert!(matches!(load_checkpoint::<f32>(&path), Err(Error::Checkpoint { .. })));
    }
}
