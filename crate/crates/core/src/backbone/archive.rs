//! Named-tensor weight archives (safetensors format, float32 only).
//!
//! The required key set for each backbone is pinned in
//! `docs/weights-manifest-*.txt`; `tools/convert_weights.py` produces an
//! archive from the published pretrained checkpoints, and
//! [`super::init::seeded_archive`] synthesizes a reproducible stand-in when
//! no checkpoint is available. A `<file>.sha256` sidecar is written on save
//! and verified on load when present.

use std::collections::BTreeMap;
use std::path::Path;

use safetensors::tensor::{Dtype, TensorView};
use safetensors::SafeTensors;
use sha2::{Digest, Sha256};

use super::BackboneError;

#[derive(Debug, Clone)]
pub struct ArchiveTensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// An in-memory set of named float32 tensors.
#[derive(Debug, Clone, Default)]
pub struct WeightArchive {
    tensors: BTreeMap<String, ArchiveTensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, key: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, data.len(), "tensor data does not match its shape");
        self.tensors.insert(key.into(), ArchiveTensor { shape, data });
    }

    pub fn get(&self, key: &str) -> Result<&ArchiveTensor, BackboneError> {
        self.tensors
            .get(key)
            .ok_or_else(|| BackboneError::MissingTensor(key.to_string()))
    }

    /// Fetches a tensor and checks its shape.
    pub fn get_checked(&self, key: &str, shape: &[usize]) -> Result<&ArchiveTensor, BackboneError> {
        let t = self.get(key)?;
        if t.shape != shape {
            return Err(BackboneError::ShapeMismatch {
                key: key.to_string(),
                expected: shape.to_vec(),
                found: t.shape.clone(),
            });
        }
        Ok(t)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BackboneError> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|source| BackboneError::Io {
            path: path.to_path_buf(),
            source,
        })?;

        let sidecar = sidecar_path(path);
        if sidecar.exists() {
            let expected = std::fs::read_to_string(&sidecar)
                .map_err(|source| BackboneError::Io { path: sidecar.clone(), source })?;
            let expected = expected.split_whitespace().next().unwrap_or("").to_string();
            let found = hex_digest(&bytes);
            if expected != found {
                return Err(BackboneError::IntegrityError {
                    path: path.to_path_buf(),
                    expected,
                    found,
                });
            }
        }

        let st = SafeTensors::deserialize(&bytes)
            .map_err(|e| BackboneError::FormatError(e.to_string()))?;
        let mut tensors = BTreeMap::new();
        for (name, view) in st.tensors() {
            if view.dtype() != Dtype::F32 {
                return Err(BackboneError::FormatError(format!(
                    "tensor {name:?} has dtype {:?}, expected F32",
                    view.dtype()
                )));
            }
            let raw = view.data();
            let mut data = Vec::with_capacity(raw.len() / 4);
            for chunk in raw.chunks_exact(4) {
                data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
            }
            tensors.insert(
                name.to_string(),
                ArchiveTensor {
                    shape: view.shape().to_vec(),
                    data,
                },
            );
        }
        Ok(Self { tensors })
    }

    /// Serializes the archive and writes the `<file>.sha256` sidecar.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), BackboneError> {
        let path = path.as_ref();
        let raw: BTreeMap<String, (Vec<usize>, Vec<u8>)> = self
            .tensors
            .iter()
            .map(|(k, t)| {
                let mut bytes = Vec::with_capacity(t.data.len() * 4);
                for v in &t.data {
                    bytes.extend_from_slice(&v.to_le_bytes());
                }
                (k.clone(), (t.shape.clone(), bytes))
            })
            .collect();
        let views: Vec<(&str, TensorView)> = raw
            .iter()
            .map(|(k, (shape, bytes))| {
                let view = TensorView::new(Dtype::F32, shape.clone(), bytes)
                    .expect("shape/data consistency is enforced at insert");
                (k.as_str(), view)
            })
            .collect();
        let bytes = safetensors::serialize(views, &None)
            .map_err(|e| BackboneError::FormatError(e.to_string()))?;
        std::fs::write(path, &bytes).map_err(|source| BackboneError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        std::fs::write(sidecar_path(path), format!("{}\n", hex_digest(&bytes))).map_err(
            |source| BackboneError::Io {
                path: path.to_path_buf(),
                source,
            },
        )?;
        Ok(())
    }
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_os_string();
    s.push(".sha256");
    std::path::PathBuf::from(s)
}

fn hex_digest(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}
