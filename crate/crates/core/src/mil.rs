//! Stage 1: gated-attention multiple-instance pooling.
//!
//! Patch features are projected, each projected row gets a gated attention
//! logit `k · (tanh(V m) ⊙ sigmoid(Q m))`, the logits are softmax-normalised
//! over the bag, and the attention-weighted mean of projected rows is
//! classified by a linear head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::optim::{uniform_init, OptimizerKind, ParamSet};
use crate::par::Exec;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::train::{fit, StepOutput, TrainConfig, TrainLog};

pub const CHECKPOINT_KIND: &str = "mil";

/// One slide: patch features, patch centres and the slide label.
#[derive(Clone, Debug, PartialEq)]
pub struct Bag {
    pub slide_id: String,
    /// `[M, D]`, one row per patch.
    pub features: Tensor<f32>,
    /// Patch centres in slide pixels, one per feature row.
    pub coords: Vec<[f64; 2]>,
    pub label: usize,
}

impl Bag {
    pub fn new(
        slide_id: impl Into<String>,
        features: Tensor<f32>,
        coords: Vec<[f64; 2]>,
        label: usize,
    ) -> Result<Self> {
        let slide_id = slide_id.into();
        let (m, _) = crate::tensor::matrix_dims("bag", &features)?;
        if m == 0 {
            return Err(Error::Dataset(format!("{slide_id}: bag has no patches")));
        }
        if coords.len() != m {
            return Err(Error::shape(
                "bag",
                format!(
                    "{slide_id}: {} coordinates for {m} feature rows",
                    coords.len()
                ),
            ));
        }
        Ok(Self {
            slide_id,
            features,
            coords,
            label,
        })
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MilConfig {
    pub proj_dim: usize,
    pub att_dim: usize,
    pub n_classes: usize,
    pub train: TrainConfig,
}

impl Default for MilConfig {
    fn default() -> Self {
        Self {
            proj_dim: 64,
            att_dim: 32,
            n_classes: 2,
            train: TrainConfig {
                epochs: 60,
                batch_size: 8,
                learning_rate: 1e-3,
                optimizer: OptimizerKind::adam(),
                seed: 0,
                clip_norm: None,
                schedule: Default::default(),
                weight_decay: 0.0,
            },
        }
    }
}

/// Per-bag output of [`MilModel::attend`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionResult {
    /// Softmax attention over patches; sums to 1.
    pub scores: Vec<f64>,
    pub bag_embedding: Vec<f64>,
    pub logits: Vec<f64>,
}

impl AttentionResult {
    pub fn predicted(&self) -> usize {
        argmax(&self.logits)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

// parameter order
const PROJ: usize = 0;
const ATT_V: usize = 1;
const ATT_Q: usize = 2;
const ATT_K: usize = 3;
const CLS: usize = 4;

/// Tape nodes of one attention pass.
#[derive(Clone, Copy, Debug)]
pub struct AttentionVars {
    /// `[M, proj_dim]`
    pub projected: Var,
    /// `[M, 1]`
    pub scores: Var,
    /// `[1, proj_dim]`
    pub embedding: Var,
    /// `[1, n_classes]`
    pub logits: Var,
}

/// Records the attention forward pass of `x: [M, D]` on `tape`.
pub fn attention_forward<T: Real>(tape: &mut Tape<T>, p: &[Var], x: Var) -> Result<AttentionVars> {
    let wp_t = tape.transpose(p[PROJ])?;
    let projected = tape.matmul(x, wp_t)?;
    let v_t = tape.transpose(p[ATT_V])?;
    let q_t = tape.transpose(p[ATT_Q])?;
    let k_t = tape.transpose(p[ATT_K])?;
    let hv = tape.matmul(projected, v_t)?;
    let hv = tape.tanh(hv);
    let hq = tape.matmul(projected, q_t)?;
    let hq = tape.sigmoid(hq);
    let gated = tape.mul(hv, hq)?;
    let e = tape.matmul(gated, k_t)?;
    let scores = tape.softmax(e)?;
    let s_t = tape.transpose(scores)?;
    let embedding = tape.matmul(s_t, projected)?;
    let cls_t = tape.transpose(p[CLS])?;
    let logits = tape.matmul(embedding, cls_t)?;
    Ok(AttentionVars {
        projected,
        scores,
        embedding,
        logits,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MilModel<T> {
    config: MilConfig,
    input_dim: usize,
    params: ParamSet<T>,
}

impl<T: Real> MilModel<T> {
    /// Seeded uniform initialisation with bound `1/sqrt(fan_in)`.
    pub fn init(input_dim: usize, config: MilConfig) -> Result<Self> {
        if input_dim == 0 || config.proj_dim == 0 || config.att_dim == 0 || config.n_classes < 2 {
            return Err(Error::InvalidArgument(
                "attention model needs positive widths and at least 2 classes".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let (d, p, a, c) = (input_dim, config.proj_dim, config.att_dim, config.n_classes);
        let mut params = ParamSet::new();
        params.push("w_proj", uniform_init(&mut rng, &[p, d], d));
        params.push("v_att", uniform_init(&mut rng, &[a, p], p));
        params.push("q_att", uniform_init(&mut rng, &[a, p], p));
        params.push("k_att", uniform_init(&mut rng, &[1, a], a));
        params.push("w_cls", uniform_init(&mut rng, &[c, p], p));
        Ok(Self {
            config,
            input_dim,
            params,
        })
    }

    /// Wraps existing weights; shapes are checked against the config.
    pub fn from_params(input_dim: usize, config: MilConfig, params: ParamSet<T>) -> Result<Self> {
        let template = Self::init(input_dim, config.clone())?;
        for (name, t) in template
            .params
            .names()
            .iter()
            .zip(template.params.tensors())
        {
            params.require(name, t.shape())?;
        }
        if params.names() != template.params.names() {
            return Err(Error::InvalidArgument(
                "attention parameters out of order".into(),
            ));
        }
        Ok(Self {
            config,
            input_dim,
            params,
        })
    }

    pub fn config(&self) -> &MilConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn cast<U: Real>(&self) -> MilModel<U> {
        MilModel {
            config: self.config.clone(),
            input_dim: self.input_dim,
            params: self.params.cast(),
        }
    }

    fn check_input(&self, features: &Tensor<T>) -> Result<()> {
        let (m, d) = crate::tensor::matrix_dims("attend", features)?;
        if d != self.input_dim {
            return Err(Error::shape(
                "attend",
                format!(
                    "features have {d} columns, model expects {}",
                    self.input_dim
                ),
            ));
        }
        if m == 0 {
            return Err(Error::Dataset("attend: bag has no patches".into()));
        }
        Ok(())
    }

    pub fn attend(&self, features: &Tensor<T>) -> Result<AttentionResult> {
        Ok(self.attend_with_projection(features)?.0)
    }

    /// Attention result plus the projected rows `[M, proj_dim]`.
    pub fn attend_with_projection(
        &self,
        features: &Tensor<T>,
    ) -> Result<(AttentionResult, Tensor<T>)> {
        self.check_input(features)?;
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(features.clone());
        let out = attention_forward(&mut tape, &vars, x)?;
        let f = |v: Var| tape.value(v).to_f64_vec();
        let result = AttentionResult {
            scores: f(out.scores),
            bag_embedding: f(out.embedding),
            logits: f(out.logits),
        };
        Ok((result, tape.value(out.projected).clone()))
    }
}

impl MilModel<f32> {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::json!({ "input_dim": self.input_dim, "config": self.config }),
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, origin)?;
        let input_dim = ck.meta["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::format(origin, "missing input_dim"))?
            as usize;
        let config: MilConfig = serde_json::from_value(ck.meta["config"].clone())?;
        Self::from_params(input_dim, config, ck.params.clone())
    }
}

/// Refuses datasets that cannot train a classifier.
pub(crate) fn check_labels(what: &str, labels: &[usize], n_classes: usize) -> Result<()> {
    if labels.len() < 2 {
        return Err(Error::Dataset(format!(
            "{what}: need at least 2 training bags"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
        return Err(Error::Dataset(format!(
            "{what}: label {bad} out of range for {n_classes} classes"
        )));
    }
    let first = labels[0];
    if labels.iter().all(|&l| l == first) {
        return Err(Error::Dataset(format!(
            "{what}: every training bag has label {first}; need at least 2 classes"
        )));
    }
    Ok(())
}

/// Trains the attention classifier on bag labels with cross-entropy.
pub fn train_mil(
    bags: &[Bag],
    config: &MilConfig,
    exec: Exec,
) -> Result<(MilModel<f32>, TrainLog)> {
    let labels: Vec<usize> = bags.iter().map(|b| b.label).collect();
    check_labels("attention training", &labels, config.n_classes)?;
    let d = bags[0].feature_dim();
    if let Some(b) = bags.iter().find(|b| b.feature_dim() != d) {
        return Err(Error::shape(
            "train_mil",
            format!(
                "{} has {} feature columns, expected {d}",
                b.slide_id,
                b.feature_dim()
            ),
        ));
    }
    let mut model = MilModel::<f32>::init(d, config.clone())?;
    let log = fit(
        "attention",
        &mut model.params,
        bags,
        &config.train,
        exec,
        |tape, vars, bag| {
            let x = tape.constant(bag.features.clone());
            let out = attention_forward(tape, vars, x)?;
            let probs = tape.softmax(out.logits)?;
            let correct = argmax(&tape.value(out.logits).to_f64_vec()) == bag.label;
            Ok(StepOutput {
                loss: tape.cross_entropy(probs, bag.label)?,
                correct: Some(correct),
            })
        },
    )?;
    Ok((model, log))
}

/// Number of patches kept at `percent`: `max(1, ceil(percent·m/100))`.
pub fn top_count(m: usize, percent: f64) -> usize {
    // multiply before dividing so that 60% of 10 is exactly 6
    let k = (percent * m as f64 / 100.0).ceil() as usize;
    k.clamp(1, m.max(1))
}

/// Indices of the top `percent`% scores, ties to the lower index, returned
/// in ascending index order.
pub fn select_top(scores: &[f64], percent: f64) -> Result<Vec<usize>> {
    if !(percent > 0.0 && percent <= 100.0) {
        return Err(Error::InvalidArgument(format!(
            "top-S percent {percent} outside (0, 100]"
        )));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let k = top_count(scores.len(), percent);
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    Ok(kept)
}

/// One line of `scores.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub patch_id: usize,
    pub attention_score: f64,
    pub selected: u8,
}

pub fn score_records(scores: &[f64], selected: &[usize]) -> Vec<ScoreRecord> {
    let mut flags = vec![0u8; scores.len()];
    for &i in selected {
        flags[i] = 1;
    }
    scores
        .iter()
        .zip(flags)
        .enumerate()
        .map(|(patch_id, (&attention_score, selected))| ScoreRecord {
            patch_id,
            attention_score,
            selected,
        })
        .collect()
}

pub fn write_scores(path: impl AsRef<Path>, records: &[ScoreRecord]) -> Result<()> {
    crate::io::write_csv(path, records)
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<Vec<ScoreRecord>> {
    crate::io::read_csv(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(classes: usize) -> MilConfig {
        MilConfig {
            proj_dim: 6,
            att_dim: 4,
            n_classes: classes,
            ..MilConfig::default()
        }
    }

    #[test]
    fn singleton_bag_gets_full_attention() {
        let m = MilModel::<f64>::init(3, cfg(2)).unwrap();
        let x = Tensor::from_f64(&[1, 3], &[0.3, -2.0, 5.0]).unwrap();
        assert_eq!(m.attend(&x).unwrap().scores, vec![1.0]);
    }

    #[test]
    fn identical_rows_split_attention() {
        let m = MilModel::<f64>::init(3, cfg(2)).unwrap();
        let x = Tensor::from_f64(&[2, 3], &[0.3, -2.0, 5.0, 0.3, -2.0, 5.0]).unwrap();
        let s = m.attend(&x).unwrap().scores;
        assert!((s[0] - 0.5).abs() < 1e-12 && (s[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let m = MilModel::<f64>::init(3, cfg(2)).unwrap();
        assert!(m.attend(&Tensor::zeros(&[2, 4])).is_err());
    }

    #[test]
    fn top_counts() {
        assert_eq!(top_count(10, 60.0), 6);
        assert_eq!(top_count(64, 10.0), 7);
        assert_eq!(top_count(3, 1.0), 1);
        assert_eq!(top_count(7, 100.0), 7);
    }

    #[test]
    fn select_top_examples() {
        let s: Vec<f64> = (0..10).map(f64::from).collect();
        assert_eq!(select_top(&s, 100.0).unwrap(), (0..10).collect::<Vec<_>>());
        assert_eq!(select_top(&s, 60.0).unwrap(), vec![4, 5, 6, 7, 8, 9]);
        assert_eq!(select_top(&[0.2; 5], 40.0).unwrap(), vec![0, 1]);
        assert!(select_top(&s, 0.0).is_err());
        assert!(select_top(&s, 101.0).is_err());
    }

    #[test]
    fn refuses_single_class() {
        let bag = |l| Bag::new("b", Tensor::zeros(&[2, 3]), vec![[0.0, 0.0]; 2], l).unwrap();
        let err = train_mil(&[bag(1), bag(1)], &cfg(2), Exec::Sequential).unwrap_err();
        assert!(matches!(err, Error::Dataset(_)), "{err}");
    }

    #[test]
    fn bag_validation() {
        assert!(Bag::new("b", Tensor::zeros(&[0, 3]), vec![], 0).is_err());
        assert!(Bag::new("b", Tensor::zeros(&[2, 3]), vec![[0.0, 0.0]], 0).is_err());
    }

    #[test]
    fn score_records_flag_selection() {
        let r = score_records(&[0.1, 0.6, 0.3], &[1, 2]);
        assert_eq!(
            r.iter().map(|r| r.selected).collect::<Vec<_>>(),
            vec![0, 1, 1]
        );
    }

    #[test]
    fn checkpoint_round_trip() {
        let m = MilModel::<f32>::init(5, cfg(3)).unwrap();
        let ck = Checkpoint::from_bytes(
            &m.to_checkpoint().unwrap().to_bytes().unwrap(),
            "m".as_ref(),
        )
        .unwrap();
        assert_eq!(MilModel::from_checkpoint(&ck, "m".as_ref()).unwrap(), m);
    }
}
