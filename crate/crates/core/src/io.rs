//! Shared file helpers: serde-backed CSV tables and the `MILF0001` feature
//! store.
//!
//! Feature-store layout: the 8-byte magic `MILF0001`, `u32` row count M,
//! `u32` column count D (both little-endian), then M·D little-endian `f32`
//! values, row-major.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 8] = b"MILF0001";

pub(crate) fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    Ok(())
}

pub(crate) fn missing_or_io(path: &Path, e: std::io::Error, what: &str) -> Error {
    if e.kind() == std::io::ErrorKind::NotFound {
        Error::MissingArtifact {
            path: path.display().to_string(),
            what: what.into(),
        }
    } else {
        Error::io(path, e)
    }
}

/// Writes rows with a header derived from the record's field names.
pub fn write_csv<R: Serialize>(path: impl AsRef<Path>, rows: &[R]) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<R: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<R>> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| missing_or_io(path, e, "table not found"))?;
    csv::Reader::from_reader(file)
        .deserialize()
        .map(|r| r.map_err(Error::from))
        .collect()
}

pub fn features_to_bytes(features: &Tensor<f32>) -> Result<Vec<u8>> {
    let (m, d) = crate::tensor::matrix_dims("feature store", features)?;
    let (m32, d32) = (u32::try_from(m), u32::try_from(d));
    let (Ok(m32), Ok(d32)) = (m32, d32) else {
        return Err(Error::InvalidArgument("feature matrix too large".into()));
    };
    let mut out = Vec::with_capacity(16 + 4 * m * d);
    out.extend_from_slice(FEATURE_MAGIC);
    out.extend_from_slice(&m32.to_le_bytes());
    out.extend_from_slice(&d32.to_le_bytes());
    for v in features.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn features_from_bytes(bytes: &[u8], origin: &Path) -> Result<Tensor<f32>> {
    if bytes.len() < 16 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(origin, "not a MILF0001 feature store"));
    }
    let m = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let d = u32::from_le_bytes(bytes[12..16].try_into().expect("4 bytes")) as usize;
    let body = &bytes[16..];
    if body.len() != 4 * m * d {
        return Err(Error::format(
            origin,
            format!("header says {m}x{d} but body holds {} bytes", body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Tensor::new(vec![m, d], data)
}

pub fn write_features(path: impl AsRef<Path>, features: &Tensor<f32>) -> Result<()> {
    let path = path.as_ref();
    ensure_parent(path)?;
    fs::write(path, features_to_bytes(features)?).map_err(|e| Error::io(path, e))
}

pub fn read_features(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| missing_or_io(path, e, "feature store not found"))?;
    features_from_bytes(&bytes, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_store_layout_and_round_trip() {
        let t = Tensor::<f32>::from_f64(
            &[2, 3],
            &[0.0, 1.5, -2.0, 3.25, f64::from(f32::MIN_POSITIVE), 7.0],
        )
        .unwrap();
        let bytes = features_to_bytes(&t).unwrap();
        assert_eq!(&bytes[..8], b"MILF0001");
        assert_eq!(&bytes[8..16], &[2, 0, 0, 0, 3, 0, 0, 0]);
        assert_eq!(bytes.len(), 16 + 24);
        let back = features_from_bytes(&bytes, Path::new("m")).unwrap();
        assert_eq!(back, t);
        assert_eq!(features_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn empty_matrix_round_trips() {
        let t = Tensor::<f32>::zeros(&[0, 64]);
        let back = features_from_bytes(&features_to_bytes(&t).unwrap(), Path::new("m")).unwrap();
        assert_eq!(back.shape(), &[0, 64]);
    }

    #[test]
    fn rejects_wrong_length() {
        let t = Tensor::<f32>::zeros(&[2, 2]);
        let bytes = features_to_bytes(&t).unwrap();
        assert!(features_from_bytes(&bytes[..bytes.len() - 1], Path::new("m")).is_err());
    }
}
