//! Slide manifests: `slide_id,path,label` CSV.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use milg_core::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub slide_id: String,
    /// Image path, relative to the manifest's directory unless absolute.
    pub path: String,
    pub label: usize,
}

#[derive(Clone, Debug)]
pub struct Manifest {
    pub rows: Vec<ManifestRow>,
    base: PathBuf,
}

impl Manifest {
    pub fn new(rows: Vec<ManifestRow>, base: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            rows,
            base: base.into(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let rows: Vec<ManifestRow> = milg_core::io::read_csv(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::new(rows, base).map_err(|e| match e {
            Error::Dataset(msg) => Error::Dataset(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        milg_core::io::write_csv(path, &self.rows)
    }

    fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::Dataset("manifest lists no slides".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &self.rows {
            let safe = !r.slide_id.is_empty()
                && r.slide_id
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
                && !r.slide_id.starts_with('.');
            if !safe {
                return Err(Error::Dataset(format!(
                    "slide id {:?} must be non-empty ASCII letters, digits, '_', '-' or '.'",
                    r.slide_id
                )));
            }
            if !seen.insert(r.slide_id.as_str()) {
                return Err(Error::Dataset(format!(
                    "duplicate slide id {:?}",
                    r.slide_id
                )));
            }
        }
        Ok(())
    }

    /// Checks every label against `n_classes`.
    pub fn check_labels(&self, n_classes: usize) -> Result<()> {
        match self.rows.iter().find(|r| r.label >= n_classes) {
            Some(r) => Err(Error::Dataset(format!(
                "slide {} has label {} outside [0, {n_classes})",
                r.slide_id, r.label
            ))),
            None => Ok(()),
        }
    }

    /// Class count implied by the labels (at least 2).
    pub fn inferred_classes(&self) -> usize {
        self.rows
            .iter()
            .map(|r| r.label + 1)
            .max()
            .unwrap_or(0)
            .max(2)
    }

    pub fn image_path(&self, row: &ManifestRow) -> PathBuf {
        let p = Path::new(&row.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    pub fn labels(&self) -> Vec<usize> {
        self.rows.iter().map(|r| r.label).collect()
    }
}
