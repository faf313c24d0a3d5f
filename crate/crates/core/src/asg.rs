//! Stage 2: stacked GCN + self-attention pooling modules.
//!
//! Module `l` propagates node features with the symmetric normalised
//! adjacency, scores nodes with a second propagation through a one-column
//! weight, keeps the top `ceil(d·n)` nodes, and gates the kept rows by
//! their scores. From the second module on, the module input (restricted
//! to the kept nodes) is added back as a residual. The surviving node
//! features are averaged and classified by a linear softmax head.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::graph::{Adjacency, PatchGraph};
use crate::mil::{argmax, check_labels};
use crate::optim::{uniform_init, OptimizerKind, ParamSet};
use crate::par::Exec;
use crate::tensor::{Real, Tape, Tensor, Var};
use crate::train::{fit, StepOutput, TrainConfig, TrainLog};

pub const CHECKPOINT_KIND: &str = "asg";

/// Training graphs used to calibrate the initial gates.
const CALIBRATION_GRAPHS: usize = 64;

/// Activation turning a node's propagated score into its gate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreGate {
    /// `ReLU(s)`: unbounded, zero for non-positive scores.
    #[default]
    Relu,
    /// `sigmoid(s)`: bounded in (0, 1), never closes completely.
    Sigmoid,
    /// `tanh(s)`: bounded in (-1, 1).
    Tanh,
}

impl ScoreGate {
    fn apply<T: Real>(self, tape: &mut Tape<T>, s: Var) -> Var {
        match self {
            ScoreGate::Relu => tape.relu(s),
            ScoreGate::Sigmoid => tape.sigmoid(s),
            ScoreGate::Tanh => tape.tanh(s),
        }
    }
}

impl std::str::FromStr for ScoreGate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(ScoreGate::Relu),
            "sigmoid" => Ok(ScoreGate::Sigmoid),
            "tanh" => Ok(ScoreGate::Tanh),
            _ => Err(Error::InvalidArgument(format!("unknown score gate {s:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AsgConfig {
    pub num_modules: usize,
    pub hidden_width: usize,
    pub pool_ratio: f64,
    pub n_classes: usize,
    #[serde(default)]
    pub gate: ScoreGate,
    pub train: TrainConfig,
}

impl Default for AsgConfig {
    fn default() -> Self {
        Self {
            num_modules: 8,
            hidden_width: 64,
            pool_ratio: 0.8,
            n_classes: 2,
            gate: ScoreGate::Relu,
            train: TrainConfig {
                epochs: 200,
                batch_size: 8,
                learning_rate: 1e-3,
                // SGD with momentum left the deep gated stack far from
                // converged in 200 epochs; clipping tames late loss spikes
                optimizer: OptimizerKind::adam(),
                seed: 0,
                clip_norm: Some(1.0),
                schedule: Default::default(),
                weight_decay: 0.0,
            },
        }
    }
}

impl AsgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.pool_ratio > 0.0 && self.pool_ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "pooling ratio {} outside (0, 1)",
                self.pool_ratio
            )));
        }
        if self.num_modules == 0 || self.hidden_width == 0 || self.n_classes < 2 {
            return Err(Error::InvalidArgument(
                "graph network needs at least one module, positive width and 2 classes".into(),
            ));
        }
        Ok(())
    }
}

/// Nodes kept by pooling `n` nodes at ratio `d`: `max(1, ceil(d·n))`.
pub fn pooled_count(n: usize, d: f64) -> usize {
    // the small slack keeps exact products such as 0.8·10 from rounding up
    ((d * n as f64 - 1e-9).ceil() as usize).clamp(1, n.max(1))
}

/// `ReLU(Â G W)` recorded on the tape, with `a_hat` already normalised.
pub fn gcn_step<T: Real>(tape: &mut Tape<T>, a_hat: Var, g: Var, w: Var) -> Result<Var> {
    let ag = tape.matmul(a_hat, g)?;
    let out = tape.matmul(ag, w)?;
    Ok(tape.relu(out))
}

/// Result of one pooling step on the tape.
pub struct PoolStep {
    /// Gated kept rows `[n', F]`.
    pub pooled: Var,
    /// Node scores `[n, 1]` before selection.
    pub scores: Var,
    pub kept: Vec<usize>,
}

/// Scores nodes, keeps the top `ceil(d·n)` (ties to the lower index, kept
/// indices ascending) and gates the kept rows by their scores.
pub fn pool_step<T: Real>(
    tape: &mut Tape<T>,
    a_hat: Var,
    g: Var,
    w_score: Var,
    d: f64,
    gate: ScoreGate,
) -> Result<PoolStep> {
    let ag = tape.matmul(a_hat, g)?;
    let raw = tape.matmul(ag, w_score)?;
    let scores = gate.apply(tape, raw);
    let values = tape.value(scores).data().to_vec();
    let k = pooled_count(values.len(), d);
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut kept = order[..k].to_vec();
    kept.sort_unstable();
    let rows = tape.gather_rows(g, &kept)?;
    let gate = tape.gather_rows(scores, &kept)?;
    let pooled = tape.scale_rows(rows, gate)?;
    Ok(PoolStep {
        pooled,
        scores,
        kept,
    })
}

/// Graph convolution on plain tensors: `ReLU(Â G W)`.
pub fn gcn_layer<T: Real>(
    g: &Tensor<T>,
    adjacency: &Adjacency,
    w: &Tensor<T>,
) -> Result<Tensor<T>> {
    if g.rows() != adjacency.len() {
        return Err(Error::shape(
            "gcn_layer",
            format!("{} feature rows for {} nodes", g.rows(), adjacency.len()),
        ));
    }
    let mut tape = Tape::new();
    let a = tape.constant(adjacency.normalized());
    let gv = tape.constant(g.clone());
    let wv = tape.constant(w.clone());
    let out = gcn_step(&mut tape, a, gv, wv)?;
    Ok(tape.value(out).clone())
}

/// Output of [`sag_pool`].
#[derive(Clone, Debug, PartialEq)]
pub struct Pooled<T> {
    pub features: Tensor<T>,
    pub adjacency: Adjacency,
    pub kept: Vec<usize>,
    /// Scores of all input nodes.
    pub scores: Vec<T>,
}

/// Self-attention pooling on plain tensors.
pub fn sag_pool<T: Real>(
    g: &Tensor<T>,
    adjacency: &Adjacency,
    w_score: &Tensor<T>,
    d: f64,
) -> Result<Pooled<T>> {
    if !(d > 0.0 && d < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "pooling ratio {d} outside (0, 1)"
        )));
    }
    let mut tape = Tape::new();
    let a = tape.constant(adjacency.normalized());
    let gv = tape.constant(g.clone());
    let wv = tape.constant(w_score.clone());
    let step = pool_step(&mut tape, a, gv, wv, d, ScoreGate::Relu)?;
    Ok(Pooled {
        features: tape.value(step.pooled).clone(),
        adjacency: adjacency.subgraph(&step.kept),
        scores: tape.value(step.scores).data().to_vec(),
        kept: step.kept,
    })
}

/// Records the full network on `tape`; returns logits `[1, n_classes]`.
///
/// `params` holds, per module, the propagation weight then the score
/// weight, followed by the head `[n_classes, F]`.
pub fn network_forward<T: Real>(
    tape: &mut Tape<T>,
    params: &[Var],
    cfg: &AsgConfig,
    features: Var,
    adjacency: &Adjacency,
) -> Result<Var> {
    let h = run_modules(tape, params, cfg, features, adjacency, cfg.num_modules)?
        .last()
        .map_or(features, |m| m.0);
    let readout = tape.mean_rows(h)?;
    let head_t = tape.transpose(params[2 * cfg.num_modules])?;
    tape.matmul(readout, head_t)
}

/// Runs the first `modules` modules; returns, per module, its output
/// features, its GCN output and its pre-selection scores.
fn run_modules<T: Real>(
    tape: &mut Tape<T>,
    params: &[Var],
    cfg: &AsgConfig,
    features: Var,
    adjacency: &Adjacency,
    modules: usize,
) -> Result<Vec<(Var, Var, Var)>> {
    let mut h = features;
    let mut adj = adjacency.clone();
    let mut trace = Vec::with_capacity(modules);
    for l in 0..modules {
        let a_hat = tape.constant(adj.normalized());
        let g = gcn_step(tape, a_hat, h, params[2 * l])?;
        let step = pool_step(tape, a_hat, g, params[2 * l + 1], cfg.pool_ratio, cfg.gate)?;
        h = if l > 0 {
            let residual = tape.gather_rows(h, &step.kept)?;
            tape.add(step.pooled, residual)?
        } else {
            step.pooled
        };
        trace.push((h, g, step.scores));
        adj = adj.subgraph(&step.kept);
    }
    Ok(trace)
}

/// Per-column standardisation of node features, fitted on training nodes.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub mean: Vec<f64>,
    /// Reciprocal standard deviation (1 for constant columns).
    pub inv_std: Vec<f64>,
}

impl FeatureScaler {
    /// Fits over every row of every matrix.
    pub fn fit<T: Real>(matrices: &[&Tensor<T>]) -> Result<Self> {
        let d = matrices.first().map_or(0, |m| m.cols());
        let rows: usize = matrices.iter().map(|m| m.rows()).sum();
        if d == 0 || rows == 0 || matrices.iter().any(|m| m.cols() != d) {
            return Err(Error::InvalidArgument(
                "cannot fit a scaler on empty or ragged features".into(),
            ));
        }
        let mut mean = vec![0.0; d];
        let mut sq = vec![0.0; d];
        for m in matrices {
            for i in 0..m.rows() {
                for (j, &v) in m.row(i).iter().enumerate() {
                    mean[j] += v.as_f64();
                    sq[j] += v.as_f64() * v.as_f64();
                }
            }
        }
        let n = rows as f64;
        let inv_std = mean
            .iter_mut()
            .zip(&sq)
            .map(|(m, &s)| {
                *m /= n;
                let var = (s / n - *m * *m).max(0.0);
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, inv_std })
    }

    pub fn apply<T: Real>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if x.cols() != self.mean.len() {
            return Err(Error::shape(
                "feature scaler",
                format!("width {} vs fitted {}", x.cols(), self.mean.len()),
            ));
        }
        let mut out = x.clone();
        let d = self.mean.len();
        for (k, v) in out.data_mut().iter_mut().enumerate() {
            let j = k % d;
            *v = T::lit((v.as_f64() - self.mean[j]) * self.inv_std[j]);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AsgModel<T> {
    config: AsgConfig,
    input_dim: usize,
    /// Applied to node features before the first module.
    scaler: Option<FeatureScaler>,
    params: ParamSet<T>,
}

impl<T: Real> AsgModel<T> {
    pub fn init(input_dim: usize, config: AsgConfig) -> Result<Self> {
        config.validate()?;
        if input_dim == 0 {
            return Err(Error::InvalidArgument(
                "node features must be non-empty".into(),
            ));
        }
        let f = config.hidden_width;
        let mut rng = ChaCha8Rng::seed_from_u64(config.train.seed);
        let mut params = ParamSet::new();
        for l in 0..config.num_modules {
            let fin = if l == 0 { input_dim } else { f };
            params.push(
                format!("module{l}.propagate"),
                uniform_init(&mut rng, &[fin, f], fin),
            );
            let mut score = uniform_init::<T, _>(&mut rng, &[f, 1], f);
            if config.gate == ScoreGate::Relu {
                // Non-negative so every ReLU gate starts open: node features
                // are post-ReLU, so scores are positive wherever they are.
                score.data_mut().iter_mut().for_each(|v| *v = v.abs());
            }
            params.push(format!("module{l}.score"), score);
        }
        // Zero logits at the start: no early pressure to shrink the gates.
        params.push("head", Tensor::zeros(&[config.n_classes, f]));
        Ok(Self {
            config,
            input_dim,
            scaler: None,
            params,
        })
    }

    pub fn from_params(input_dim: usize, config: AsgConfig, params: ParamSet<T>) -> Result<Self> {
        let template = Self::init(input_dim, config.clone())?;
        if params.names() != template.params.names() {
            return Err(Error::InvalidArgument(
                "graph network parameters do not match config".into(),
            ));
        }
        for (name, t) in template
            .params
            .names()
            .iter()
            .zip(template.params.tensors())
        {
            params.require(name, t.shape())?;
        }
        Ok(Self {
            config,
            input_dim,
            scaler: None,
            params,
        })
    }

    pub fn config(&self) -> &AsgConfig {
        &self.config
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn params(&self) -> &ParamSet<T> {
        &self.params
    }

    pub fn scaler(&self) -> Option<&FeatureScaler> {
        self.scaler.as_ref()
    }

    pub fn with_scaler(mut self, scaler: Option<FeatureScaler>) -> Result<Self> {
        if let Some(s) = &scaler {
            if s.mean.len() != self.input_dim || s.inv_std.len() != self.input_dim {
                return Err(Error::shape(
                    "feature scaler",
                    format!("fitted width {} vs {}", s.mean.len(), self.input_dim),
                ));
            }
        }
        self.scaler = scaler;
        Ok(self)
    }

    pub fn cast<U: Real>(&self) -> AsgModel<U> {
        AsgModel {
            config: self.config.clone(),
            input_dim: self.input_dim,
            scaler: self.scaler.clone(),
            params: self.params.cast(),
        }
    }

    /// Class probabilities for one graph.
    pub fn forward(&self, features: &Tensor<T>, adjacency: &Adjacency) -> Result<Vec<f64>> {
        if features.cols() != self.input_dim || features.rows() != adjacency.len() {
            return Err(Error::shape(
                "asg forward",
                format!(
                    "features {:?} for {} nodes, model expects width {}",
                    features.shape(),
                    adjacency.len(),
                    self.input_dim
                ),
            ));
        }
        if adjacency.is_empty() {
            return Err(Error::Dataset("graph has no nodes".into()));
        }
        let features = match &self.scaler {
            Some(s) => s.apply(features)?,
            None => features.clone(),
        };
        let mut tape = Tape::new();
        let vars = self.params.bind(&mut tape);
        let x = tape.constant(features);
        let logits = network_forward(&mut tape, &vars, &self.config, x, adjacency)?;
        let probs = tape.softmax(logits)?;
        Ok(tape.value(probs).to_f64_vec())
    }
}

impl AsgModel<f32> {
    /// Data-dependent initialisation over `graphs` (features already
    /// passed through the scaler), module by module:
    /// rescales the propagation weight so the GCN output has unit RMS, then
    /// (for ReLU gates) the score weight so the mean score is 1. Both maps are positively
    /// homogeneous in their weight, so one rescale each is exact, and the
    /// gates start neither shrinking nor inflating features whatever the
    /// input scale.
    pub fn calibrate(&mut self, graphs: &[PatchGraph]) -> Result<()> {
        for l in 0..self.config.num_modules {
            let rms = self.module_stat(graphs, l, |o| &o.1, |v| v * v)?.sqrt();
            self.rescale(2 * l, rms);
            if self.config.gate == ScoreGate::Relu {
                let mean = self.module_stat(graphs, l, |o| &o.2, |v| v)?;
                self.rescale(2 * l + 1, mean);
            }
        }
        Ok(())
    }

    /// Mean of `f` over the GCN outputs or scores of module `l`.
    fn module_stat(
        &self,
        graphs: &[PatchGraph],
        l: usize,
        pick: impl Fn(&(Var, Var, Var)) -> &Var,
        f: impl Fn(f64) -> f64,
    ) -> Result<f64> {
        let (mut sum, mut count) = (0.0f64, 0usize);
        for g in graphs {
            let mut tape = Tape::new();
            let vars = self.params.bind(&mut tape);
            let x = tape.constant(g.node_features.clone());
            let trace = run_modules(&mut tape, &vars, &self.config, x, &g.adjacency, l + 1)?;
            let t = tape.value(*pick(&trace[l]));
            sum += t.data().iter().map(|&v| f(v as f64)).sum::<f64>();
            count += t.len();
        }
        Ok(sum / count.max(1) as f64)
    }

    fn rescale(&mut self, param: usize, by: f64) {
        if by > 0.0 && by.is_finite() {
            let w = &mut self.params.tensors_mut()[param];
            w.data_mut()
                .iter_mut()
                .for_each(|v| *v = (*v as f64 / by) as f32);
        }
    }

    pub fn predict(&self, graph: &PatchGraph) -> Result<Vec<f64>> {
        self.forward(&graph.node_features, &graph.adjacency)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        Ok(Checkpoint {
            kind: CHECKPOINT_KIND.into(),
            meta: serde_json::json!({
                "input_dim": self.input_dim,
                "config": self.config,
                "scaler": self.scaler,
            }),
            params: self.params.clone(),
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint, origin: &Path) -> Result<Self> {
        ck.expect_kind(CHECKPOINT_KIND, origin)?;
        let input_dim = ck.meta["input_dim"]
            .as_u64()
            .ok_or_else(|| Error::format(origin, "missing input_dim"))?
            as usize;
        let config: AsgConfig = serde_json::from_value(ck.meta["config"].clone())?;
        let scaler: Option<FeatureScaler> = serde_json::from_value(ck.meta["scaler"].clone())?;
        Self::from_params(input_dim, config, ck.params.clone())?.with_scaler(scaler)
    }
}

/// Predicted class of each graph, in input order.
pub fn predict_all(model: &AsgModel<f32>, graphs: &[PatchGraph], exec: Exec) -> Result<Vec<usize>> {
    exec.try_map(graphs, |g| Ok(argmax(&model.predict(g)?)))
}

/// Minimises mean cross-entropy over graphs.
pub fn train_gcn(
    graphs: &[PatchGraph],
    config: &AsgConfig,
    exec: Exec,
) -> Result<(AsgModel<f32>, TrainLog)> {
    let labels: Vec<usize> = graphs.iter().map(|g| g.label).collect();
    check_labels("graph training", &labels, config.n_classes)?;
    let d = graphs[0].node_features.cols();
    if let Some(g) = graphs
        .iter()
        .find(|g| g.node_features.cols() != d || g.is_empty())
    {
        return Err(Error::shape(
            "train_gcn",
            format!(
                "{} has {} nodes of width {}, expected width {d}",
                g.slide_id,
                g.len(),
                g.node_features.cols()
            ),
        ));
    }
    let scaler = FeatureScaler::fit(&graphs.iter().map(|g| &g.node_features).collect::<Vec<_>>())?;
    let scaled: Vec<PatchGraph> = graphs
        .iter()
        .map(|g| {
            Ok(PatchGraph {
                node_features: scaler.apply(&g.node_features)?,
                ..g.clone()
            })
        })
        .collect::<Result<_>>()?;
    let mut model = AsgModel::<f32>::init(d, config.clone())?.with_scaler(Some(scaler))?;
    model.calibrate(&scaled[..scaled.len().min(CALIBRATION_GRAPHS)])?;
    let cfg = config.clone();
    let log = fit(
        "graph",
        &mut model.params,
        &scaled,
        &config.train,
        exec,
        |tape, vars, g| {
            let x = tape.constant(g.node_features.clone());
            let logits = network_forward(tape, vars, &cfg, x, &g.adjacency)?;
            let correct = argmax(&tape.value(logits).to_f64_vec()) == g.label;
            let probs = tape.softmax(logits)?;
            Ok(StepOutput {
                loss: tape.cross_entropy(probs, g.label)?,
                correct: Some(correct),
            })
        },
    )?;
    Ok((model, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn pooled_counts() {
        assert_eq!(pooled_count(10, 0.5), 5);
        assert_eq!(pooled_count(10, 0.8), 8);
        assert_eq!(pooled_count(1, 0.5), 1);
        assert_eq!(pooled_count(39, 0.8), 32);
        assert_eq!(pooled_count(3, 0.1), 1);
    }

    #[test]
    fn single_node_layer() {
        let out = gcn_layer(
            &t(&[1, 1], &[2.0]),
            &Adjacency::empty(1),
            &t(&[1, 1], &[-1.5]),
        )
        .unwrap();
        assert_eq!(out.data(), &[0.0]);
        let out = gcn_layer(
            &t(&[1, 1], &[2.0]),
            &Adjacency::empty(1),
            &t(&[1, 1], &[1.5]),
        )
        .unwrap();
        assert_eq!(out.data(), &[3.0]);
    }

    #[test]
    fn isolated_nodes_are_independent() {
        let g = t(&[2, 2], &[1.0, -1.0, 0.5, 2.0]);
        let w = t(&[2, 1], &[1.0, 0.5]);
        let out = gcn_layer(&g, &Adjacency::empty(2), &w).unwrap();
        assert_eq!(out.data(), &[0.5, 1.5]);
    }

    #[test]
    fn triangle_by_hand() {
        // every entry of the normalised triangle is 1/3, so each output row
        // is ReLU(mean(G) · W)
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let g = t(&[3, 2], &[1.0, 0.0, 0.0, 2.0, 2.0, 1.0]);
        let w = t(&[2, 2], &[1.0, -1.0, 0.5, 0.0]);
        let out = gcn_layer(&g, &adj, &w).unwrap();
        // mean(G) = [1, 1]; [1,1]·W = [1.5, -1]
        for row in 0..3 {
            assert!((out.at(row, 0) - 1.5).abs() < 1e-12);
            assert_eq!(out.at(row, 1), 0.0);
        }
    }

    #[test]
    fn pooling_single_node() {
        let g = t(&[1, 2], &[2.0, 3.0]);
        let p = sag_pool(&g, &Adjacency::empty(1), &t(&[2, 1], &[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(p.kept, vec![0]);
        assert_eq!(p.features.data(), &[10.0, 15.0]);
    }

    #[test]
    fn star_centre_survives() {
        // centre is node 4 so the tie rule cannot help it
        let adj = Adjacency::from_edges(5, &[(4, 0), (4, 1), (4, 2), (4, 3)]).unwrap();
        let centre = 3.0;
        let g = t(&[5, 1], &[1.0, 1.0, 1.0, 1.0, centre]);
        let p = sag_pool(&g, &adj, &t(&[1, 1], &[1.0]), 0.5).unwrap();
        // brute force: centre degree 5 with itself, leaves degree 2
        let centre_score = centre / 5.0 + 4.0 / 10f64.sqrt();
        let leaf_score = 1.0 / 2.0 + centre / 10f64.sqrt();
        assert!((p.scores[4] - centre_score).abs() < 1e-12);
        assert!((p.scores[0] - leaf_score).abs() < 1e-12);
        assert!(centre_score > leaf_score);
        assert_eq!(p.kept, vec![0, 1, 4]);
        assert!(p.adjacency.is_symmetric());
    }

    #[test]
    fn rejects_bad_ratio() {
        let g = t(&[1, 1], &[1.0]);
        assert!(sag_pool(&g, &Adjacency::empty(1), &t(&[1, 1], &[1.0]), 1.0).is_err());
        let cfg = AsgConfig {
            pool_ratio: 0.0,
            ..AsgConfig::default()
        };
        assert!(AsgModel::<f64>::init(2, cfg).is_err());
    }

    #[test]
    fn single_module_single_node_collapses() {
        let cfg = AsgConfig {
            num_modules: 1,
            hidden_width: 1,
            n_classes: 2,
            ..AsgConfig::default()
        };
        let mut ps = ParamSet::new();
        ps.push("module0.propagate", t(&[1, 1], &[1.5]));
        ps.push("module0.score", t(&[1, 1], &[0.5]));
        ps.push("head", t(&[2, 1], &[1.0, -1.0]));
        let m = AsgModel::from_params(1, cfg, ps).unwrap();
        let probs = m
            .forward(&t(&[1, 1], &[2.0]), &Adjacency::empty(1))
            .unwrap();
        // h = relu(2·1.5) = 3, score = relu(3·0.5) = 1.5, v = 4.5
        let v: f64 = 4.5;
        let (a, b) = (v.exp(), (-v).exp());
        assert!((probs[0] - a / (a + b)).abs() < 1e-12);
        assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn checkpoint_round_trip() {
        let cfg = AsgConfig {
            num_modules: 2,
            hidden_width: 3,
            n_classes: 3,
            ..AsgConfig::default()
        };
        let m = AsgModel::<f32>::init(4, cfg).unwrap();
        let ck = Checkpoint::from_bytes(
            &m.to_checkpoint().unwrap().to_bytes().unwrap(),
            "m".as_ref(),
        )
        .unwrap();
        assert_eq!(AsgModel::from_checkpoint(&ck, "m".as_ref()).unwrap(), m);
    }

    #[test]
    fn two_module_gradients_match_finite_differences() {
        use rand::Rng;
        let cfg = AsgConfig {
            num_modules: 2,
            hidden_width: 4,
            n_classes: 3,
            ..AsgConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 7;
        let x = Tensor::from_f64(
            &[n, 3],
            &(0..n * 3)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect::<Vec<_>>(),
        )
        .unwrap();
        let pts: Vec<[f64; 2]> = (0..n)
            .map(|_| [rng.gen_range(0.0..10.0), rng.gen_range(0.0..10.0)])
            .collect();
        let adj = crate::graph::knn_adjacency(&pts, 2);
        let model = AsgModel::<f64>::init(3, cfg.clone()).unwrap();
        let report = crate::tensor::grad_check(
            |tape, vars| {
                let xv = tape.constant(x.clone());
                let logits = network_forward(tape, vars, &cfg, xv, &adj)?;
                let p = tape.softmax(logits)?;
                tape.cross_entropy(p, 1)
            },
            model.params().tensors(),
            1e-6,
            usize::MAX,
            0,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
