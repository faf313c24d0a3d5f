//! `MILCKPT1` checkpoint format shared by every model.
//!
//! Layout: the 8-byte magic `MILCKPT1`, a little-endian `u64` byte length,
//! that many bytes of UTF-8 JSON manifest, then the tensors as raw
//! little-endian `f32` values, row-major. Manifest offsets are relative to
//! the first byte after the manifest.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::ParamSet;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MILCKPT1";

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    kind: String,
    #[serde(default)]
    meta: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

/// Model weights plus the configuration needed to rebuild the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    /// Model family, e.g. `"mil"`.
    pub kind: String,
    pub meta: serde_json::Value,
    pub params: ParamSet<f32>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let mut entries = Vec::with_capacity(self.params.len());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
                offset,
            });
            offset += 4 * t.len() as u64;
        }
        let manifest = serde_json::to_vec(&Manifest {
            kind: self.kind.clone(),
            meta: self.meta.clone(),
            tensors: entries,
        })?;
        let mut out = Vec::with_capacity(16 + manifest.len() + offset as usize);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        out.extend_from_slice(&manifest);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |msg: &str| Error::format(origin, msg);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a MILCKPT1 checkpoint"));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..16 + len)
            .ok_or_else(|| bad("truncated manifest"))?;
        let manifest: Manifest =
            serde_json::from_slice(body).map_err(|e| bad(&format!("manifest: {e}")))?;
        let data = &bytes[16 + len..];
        let mut params = ParamSet::new();
        for e in manifest.tensors {
            let n: usize = e.shape.iter().product();
            let start = e.offset as usize;
            let raw = data
                .get(start..start + 4 * n)
                .ok_or_else(|| bad(&format!("tensor {} out of bounds", e.name)))?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            params.push(e.name, Tensor::new(e.shape, values)?);
        }
        Ok(Self {
            kind: manifest.kind,
            meta: manifest.meta,
            params,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingArtifact {
                    path: path.display().to_string(),
                    what: "checkpoint not found; run the corresponding training step first".into(),
                }
            } else {
                Error::io(path, e)
            }
        })?;
        Self::from_bytes(&bytes, path)
    }

    /// Fails unless the checkpoint belongs to the expected model family.
    pub fn expect_kind(&self, kind: &str, origin: &Path) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                origin,
                format!("expected a {kind} checkpoint, found {}", self.kind),
            ));
        }
        Ok(())
    }
}
