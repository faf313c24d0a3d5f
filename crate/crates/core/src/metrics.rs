//! Classification metrics and patch-retrieval scores.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Confusion matrix (rows = truth, columns = prediction) and derived
/// macro-averaged scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_classes: usize,
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    /// Macro recall.
    pub sensitivity: f64,
    /// Macro precision.
    pub precision: f64,
    pub cohen_kappa: f64,
    /// Quadratic-weighted kappa, reported for ordinal labels only.
    pub quadratic_kappa: f64,
    /// Classes whose precision had an empty denominator (scored as 0).
    pub zero_division: Vec<usize>,
}

pub fn compute_metrics(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> Result<MetricsReport> {
    if truth.len() != predicted.len() {
        return Err(Error::InvalidArgument(format!(
            "{} truths vs {} predictions",
            truth.len(),
            predicted.len()
        )));
    }
    if truth.is_empty() {
        return Err(Error::InvalidArgument("no predictions to score".into()));
    }
    if let Some(&c) = truth.iter().chain(predicted).find(|&&c| c >= n_classes) {
        return Err(Error::InvalidArgument(format!(
            "class {c} out of range for {n_classes} classes"
        )));
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[t][p] += 1;
    }
    let total = truth.len() as f64;
    let row: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let col: Vec<usize> = (0..n_classes)
        .map(|j| confusion.iter().map(|r| r[j]).sum())
        .collect();
    let diag: usize = (0..n_classes).map(|i| confusion[i][i]).sum();

    let present: Vec<usize> = (0..n_classes).filter(|&c| row[c] > 0).collect();
    let mut zero_division = Vec::new();
    let (mut f1_sum, mut rec_sum, mut prec_sum) = (0.0, 0.0, 0.0);
    for &c in &present {
        let tp = confusion[c][c] as f64;
        let recall = tp / row[c] as f64;
        let precision = if col[c] == 0 {
            zero_division.push(c);
            0.0
        } else {
            tp / col[c] as f64
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        f1_sum += f1;
        rec_sum += recall;
        prec_sum += precision;
    }
    let k = present.len() as f64;
    let p_o = diag as f64 / total;
    let p_e: f64 = (0..n_classes)
        .map(|c| row[c] as f64 * col[c] as f64)
        .sum::<f64>()
        / (total * total);
    let cohen_kappa = if (1.0 - p_e).abs() < 1e-12 {
        0.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    Ok(MetricsReport {
        n_classes,
        quadratic_kappa: quadratic_kappa(&confusion, &row, &col, total),
        confusion,
        accuracy: p_o,
        macro_f1: f1_sum / k,
        sensitivity: rec_sum / k,
        precision: prec_sum / k,
        cohen_kappa,
        zero_division,
    })
}

fn quadratic_kappa(confusion: &[Vec<usize>], row: &[usize], col: &[usize], total: f64) -> f64 {
    let n = confusion.len();
    if n < 2 {
        return 0.0;
    }
    let (mut observed, mut expected) = (0.0, 0.0);
    for i in 0..n {
        for j in 0..n {
            let w = ((i as f64 - j as f64) / (n - 1) as f64).powi(2);
            observed += w * confusion[i][j] as f64 / total;
            expected += w * row[i] as f64 * col[j] as f64 / (total * total);
        }
    }
    if expected.abs() < 1e-12 {
        0.0
    } else {
        1.0 - observed / expected
    }
}

impl MetricsReport {
    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::io::ensure_parent(path)?;
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    /// Confusion matrix as CSV with a `truth` column and one column per
    /// predicted class.
    pub fn confusion_csv(&self) -> String {
        let mut s = String::from("truth");
        for j in 0..self.n_classes {
            s.push_str(&format!(",pred_{j}"));
        }
        s.push('\n');
        for (i, r) in self.confusion.iter().enumerate() {
            s.push_str(&i.to_string());
            for v in r {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }

    pub fn write_confusion(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        crate::io::ensure_parent(path)?;
        std::fs::write(path, self.confusion_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Precision and recall of a patch selection against motif membership.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Retrieval {
    pub precision: f64,
    pub recall: f64,
}

pub fn retrieval_score(selected: &[usize], membership: &[bool]) -> Result<Retrieval> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument("empty selection".into()));
    }
    if let Some(&i) = selected.iter().find(|&&i| i >= membership.len()) {
        return Err(Error::InvalidArgument(format!(
            "patch {i} outside a bag of {}",
            membership.len()
        )));
    }
    let unique: BTreeSet<usize> = selected.iter().copied().collect();
    let hits = unique.iter().filter(|&&i| membership[i]).count() as f64;
    let motif = membership.iter().filter(|&&m| m).count();
    Ok(Retrieval {
        precision: hits / unique.len() as f64,
        recall: if motif == 0 { 0.0 } else { hits / motif as f64 },
    })
}
