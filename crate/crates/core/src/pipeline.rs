//! Two-stage pipeline orchestration: stratified k-fold evaluation and
//! hyperparameter sweeps.
//!
//! Stage 1 (attention model) does not depend on the top-S percentage, K or
//! the number of graph modules, so a fold's stage-1 model and its per-bag
//! attention outputs are computed once and shared by every sweep value.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::asg::{predict_all, train_gcn, AsgConfig};
use crate::error::{Error, Result};
use crate::graph::{build_graph, PatchGraph};
use crate::metrics::{compute_metrics, MetricsReport};
use crate::mil::{select_top, train_mil, AttentionResult, Bag, MilConfig, MilModel};
use crate::par::Exec;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub mil: MilConfig,
    pub asg: AsgConfig,
    pub top_percent: f64,
    pub knn_k: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            mil: MilConfig::default(),
            asg: AsgConfig::default(),
            top_percent: 60.0,
            knn_k: 10,
        }
    }
}

impl PipelineConfig {
    /// Sets the class count of both stages.
    pub fn with_classes(mut self, n: usize) -> Self {
        self.mil.n_classes = n;
        self.asg.n_classes = n;
        self
    }
}

/// Fold index of every bag. Each class is shuffled and dealt round-robin
/// with a counter shared across classes, so fold sizes differ by at most
/// one.
pub fn stratified_folds(labels: &[usize], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 folds, got {k}"
        )));
    }
    let n_classes = labels.iter().max().map_or(0, |&m| m + 1);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); n_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    let counts: Vec<String> = by_class
        .iter()
        .enumerate()
        .filter(|(_, v)| !v.is_empty())
        .map(|(c, v)| format!("class {c}: {}", v.len()))
        .collect();
    if by_class.iter().any(|v| !v.is_empty() && v.len() < k) {
        return Err(Error::Dataset(format!(
            "cannot stratify into {k} folds; every class needs at least {k} bags ({})",
            counts.join(", ")
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    let mut counter = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &i in members.iter() {
            fold[i] = counter % k;
            counter += 1;
        }
    }
    Ok(fold)
}

fn derive_seed(base: u64, fold: usize, stage: u64) -> u64 {
    base.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        .wrapping_add((fold as u64) << 8)
        .wrapping_add(stage)
}

/// Trained stage 1 of one fold with the attention outputs of every bag.
pub struct Stage1Fold {
    pub fold: usize,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    pub model: MilModel<f32>,
    /// Attention result and projected features of every bag.
    pub outputs: Vec<(AttentionResult, Tensor<f32>)>,
}

/// Selects, links and returns the graph of every bag for one setting.
pub fn bag_graphs(
    bags: &[Bag],
    outputs: &[(AttentionResult, Tensor<f32>)],
    top_percent: f64,
    k: usize,
    exec: Exec,
) -> Result<Vec<PatchGraph>> {
    exec.try_map_range(bags.len(), |i| {
        let (att, projected) = &outputs[i];
        let selected = select_top(&att.scores, top_percent)?;
        build_graph(&bags[i], &selected, projected, k)
    })
}

/// Runs every fold's stage 1.
pub fn stage1_folds(
    bags: &[Bag],
    k: usize,
    cfg: &PipelineConfig,
    seed: u64,
    exec: Exec,
) -> Result<Vec<Stage1Fold>> {
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    let assignment = stratified_folds(&labels, k, seed)?;
    (0..k)
        .map(|fold| {
            let train: Vec<usize> = (0..bags.len()).filter(|&i| assignment[i] != fold).collect();
            let test: Vec<usize> = (0..bags.len()).filter(|&i| assignment[i] == fold).collect();
            let train_bags: Vec<Bag> = train.iter().map(|&i| bags[i].clone()).collect();
            let mut mil_cfg = cfg.mil.clone();
            mil_cfg.train.seed = derive_seed(seed, fold, 1);
            let (model, _) = train_mil(&train_bags, &mil_cfg, exec)?;
            let outputs = exec.try_map(bags, |b| model.attend_with_projection(&b.features))?;
            log::info!("fold {fold}: stage 1 trained on {} bags", train.len());
            Ok(Stage1Fold {
                fold,
                train,
                test,
                model,
                outputs,
            })
        })
        .collect()
}

/// Out-of-fold predictions of one fold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FoldOutcome {
    pub fold: usize,
    pub test: Vec<usize>,
    pub predicted: Vec<usize>,
    pub attention_predicted: Vec<usize>,
    pub report: MetricsReport,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct KFoldReport {
    pub folds: Vec<FoldOutcome>,
    /// Metrics on pooled out-of-fold predictions of the full pipeline.
    pub aggregate: MetricsReport,
    /// Same, for the stage-1 attention classifier alone.
    pub attention_aggregate: MetricsReport,
    /// Out-of-fold prediction of every bag.
    pub predicted: Vec<usize>,
    pub fold_of: Vec<usize>,
}

/// Stage 2 on top of precomputed stage-1 folds.
pub fn stage2_report(
    bags: &[Bag],
    stage1: &[Stage1Fold],
    cfg: &PipelineConfig,
    seed: u64,
    exec: Exec,
) -> Result<KFoldReport> {
    let n_classes = cfg.asg.n_classes;
    let mut predicted = vec![0; bags.len()];
    let mut attention = vec![0; bags.len()];
    let mut fold_of = vec![0; bags.len()];
    let mut folds = Vec::with_capacity(stage1.len());
    for s1 in stage1 {
        let graphs = bag_graphs(bags, &s1.outputs, cfg.top_percent, cfg.knn_k, exec)?;
        let train_graphs: Vec<PatchGraph> = s1.train.iter().map(|&i| graphs[i].clone()).collect();
        let test_graphs: Vec<PatchGraph> = s1.test.iter().map(|&i| graphs[i].clone()).collect();
        let mut asg_cfg = cfg.asg.clone();
        asg_cfg.train.seed = derive_seed(seed, s1.fold, 2);
        let (model, _) = train_gcn(&train_graphs, &asg_cfg, exec)?;
        let pred = predict_all(&model, &test_graphs, exec)?;
        let att: Vec<usize> = s1
            .test
            .iter()
            .map(|&i| s1.outputs[i].0.predicted())
            .collect();
        let truth: Vec<usize> = s1.test.iter().map(|&i| bags[i].label).collect();
        for (j, &i) in s1.test.iter().enumerate() {
            predicted[i] = pred[j];
            attention[i] = att[j];
            fold_of[i] = s1.fold;
        }
        let report = compute_metrics(&truth, &pred, n_classes)?;
        log::info!("fold {}: accuracy {:.3}", s1.fold, report.accuracy);
        folds.push(FoldOutcome {
            fold: s1.fold,
            test: s1.test.clone(),
            predicted: pred,
            attention_predicted: att,
            report,
        });
    }
    let truth: Vec<usize> = bags.iter().map(|b| b.label).collect();
    Ok(KFoldReport {
        folds,
        aggregate: compute_metrics(&truth, &predicted, n_classes)?,
        attention_aggregate: compute_metrics(&truth, &attention, n_classes)?,
        predicted,
        fold_of,
    })
}

/// Stratified k-fold evaluation of the full pipeline.
pub fn kfold_run(
    bags: &[Bag],
    k: usize,
    cfg: &PipelineConfig,
    seed: u64,
    exec: Exec,
) -> Result<KFoldReport> {
    let stage1 = stage1_folds(bags, k, cfg, seed, exec)?;
    stage2_report(bags, &stage1, cfg, seed, exec)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SweepAxis {
    AsgModules,
    K,
    SPercent,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::AsgModules => "asg_modules",
            SweepAxis::K => "K",
            SweepAxis::SPercent => "S_percent",
        }
    }

    /// Copy of `base` with this axis set to `value`.
    pub fn apply(self, base: &PipelineConfig, value: f64) -> Result<PipelineConfig> {
        let mut cfg = base.clone();
        let whole = || -> Result<usize> {
            if value >= 1.0 && value.fract() == 0.0 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidArgument(format!(
                    "{} needs a positive integer, got {value}",
                    self.name()
                )))
            }
        };
        match self {
            SweepAxis::AsgModules => cfg.asg.num_modules = whole()?,
            SweepAxis::K => cfg.knn_k = whole()?,
            SweepAxis::SPercent => cfg.top_percent = value,
        }
        Ok(cfg)
    }
}

impl fmt::Display for SweepAxis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "asg_modules" | "asg-modules" | "l" => Ok(SweepAxis::AsgModules),
            "k" | "knn_k" | "knn-k" => Ok(SweepAxis::K),
            "s_percent" | "s-percent" | "s" | "top_s" | "top-s" => Ok(SweepAxis::SPercent),
            _ => Err(Error::InvalidArgument(format!(
                "unknown sweep axis {s:?}; expected asg_modules, K or S_percent"
            ))),
        }
    }
}

/// One line of `sweep.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: f64,
    pub accuracy: f64,
    pub f1: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub kappa: f64,
}

impl SweepRow {
    pub fn new(axis: SweepAxis, value: f64, r: &MetricsReport) -> Self {
        Self {
            axis: axis.name().into(),
            value,
            accuracy: r.accuracy,
            f1: r.macro_f1,
            sensitivity: r.sensitivity,
            precision: r.precision,
            kappa: r.cohen_kappa,
        }
    }
}

/// k-fold evaluation at each value of one axis, everything else fixed.
pub fn sweep(
    bags: &[Bag],
    axis: SweepAxis,
    values: &[f64],
    base: &PipelineConfig,
    k: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return Err(Error::InvalidArgument(
            "sweep needs at least one value".into(),
        ));
    }
    let configs: Vec<PipelineConfig> = values
        .iter()
        .map(|&v| axis.apply(base, v))
        .collect::<Result<_>>()?;
    let stage1 = stage1_folds(bags, k, base, seed, exec)?;
    values
        .iter()
        .zip(&configs)
        .map(|(&v, cfg)| {
            let report = stage2_report(bags, &stage1, cfg, seed, exec)?;
            log::info!(
                "sweep {axis}={v}: accuracy {:.3}",
                report.aggregate.accuracy
            );
            Ok(SweepRow::new(axis, v, &report.aggregate))
        })
        .collect()
}

pub fn write_sweep(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    crate::io::write_csv(path, rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_partition_and_stratify() {
        let labels: Vec<usize> = (0..100).map(|i| i % 4).collect();
        let f = stratified_folds(&labels, 5, 3).unwrap();
        for fold in 0..5 {
            let members: Vec<usize> = (0..100).filter(|&i| f[i] == fold).collect();
            assert_eq!(members.len(), 20);
            for c in 0..4 {
                assert_eq!(members.iter().filter(|&&i| labels[i] == c).count(), 5);
            }
        }
        assert_eq!(f, stratified_folds(&labels, 5, 3).unwrap());
        assert_ne!(f, stratified_folds(&labels, 5, 4).unwrap());
    }

    #[test]
    fn infeasible_stratification_lists_counts() {
        let err = stratified_folds(&[0, 0, 0, 1, 1], 3, 0)
            .unwrap_err()
            .to_string();
        assert!(err.contains("class 1: 2"), "{err}");
        assert!(stratified_folds(&[0, 1], 1, 0).is_err());
    }

    #[test]
    fn axis_parsing_and_application() {
        assert_eq!("K".parse::<SweepAxis>().unwrap(), SweepAxis::K);
        assert_eq!(
            "S_percent".parse::<SweepAxis>().unwrap(),
            SweepAxis::SPercent
        );
        assert!("depth".parse::<SweepAxis>().is_err());
        let base = PipelineConfig::default();
        assert_eq!(
            SweepAxis::AsgModules
                .apply(&base, 3.0)
                .unwrap()
                .asg
                .num_modules,
            3
        );
        assert!(SweepAxis::K.apply(&base, 2.5).is_err());
        assert_eq!(
            SweepAxis::SPercent.apply(&base, 30.0).unwrap().top_percent,
            30.0
        );
    }
}
