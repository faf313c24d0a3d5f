//! Seeded mini-batch training loop shared by all three models.
//!
//! Each sample gets its own tape; per-sample gradients are summed in batch
//! order, so the trajectory does not depend on how many threads ran.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optim::{Optimizer, OptimizerKind, ParamSet};
use crate::par::Exec;
use crate::tensor::{Real, Tape, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Rescales the batch gradient to at most this global L2 norm.
    #[serde(default)]
    pub clip_norm: Option<f64>,
    #[serde(default)]
    pub schedule: LrSchedule,
    /// Decoupled weight decay per unit learning rate (0 disables it).
    #[serde(default)]
    pub weight_decay: f64,
}

/// Learning rate over the epochs.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate at the first epoch towards zero after
    /// the last.
    Cosine,
}

impl LrSchedule {
    /// Rate for `epoch` (1-based) out of `epochs`.
    pub fn rate(self, base: f64, epoch: usize, epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let t = (epoch - 1) as f64 / epochs.max(1) as f64;
                0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochStat {
    pub epoch: usize,
    pub loss: f64,
    pub train_acc: Option<f64>,
}

/// Per-epoch training history.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStat>,
}

impl TrainLog {
    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn last_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    /// CSV with header `epoch,loss,train_acc`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,loss,train_acc\n");
        for e in &self.epochs {
            let acc = e.train_acc.map(|a| format!("{a:.6}")).unwrap_or_default();
            s.push_str(&format!("{},{:.8},{}\n", e.epoch, e.loss, acc));
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// What the model closure returns for one sample.
pub struct StepOutput {
    pub loss: Var,
    /// Whether the prediction was right, for classifiers.
    pub correct: Option<bool>,
}

struct SampleGrad<T> {
    loss: f64,
    correct: Option<bool>,
    grads: Vec<Tensor<T>>,
}

/// Minimises the mean per-sample loss returned by `forward`.
///
/// `forward` receives the parameters bound to a fresh tape, in
/// [`ParamSet`] order. `label` names the model in diagnostics.
pub fn fit<T, S, F>(
    label: &str,
    params: &mut ParamSet<T>,
    samples: &[S],
    cfg: &TrainConfig,
    exec: Exec,
    forward: F,
) -> Result<TrainLog>
where
    T: Real,
    S: Sync,
    F: Fn(&mut Tape<T>, &[Var], &S) -> Result<StepOutput> + Sync + Send,
{
    if samples.is_empty() {
        return Err(Error::Dataset(format!("{label}: no training samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params)
        .with_weight_decay(cfg.weight_decay);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut log = TrainLog::default();
    let batch = cfg.batch_size.max(1);

    for epoch in 1..=cfg.epochs {
        opt.set_learning_rate(cfg.schedule.rate(cfg.learning_rate, epoch, cfg.epochs));
        order.shuffle(&mut rng);
        let (mut loss_sum, mut n_correct, mut n_scored) = (0.0, 0usize, 0usize);
        for chunk in order.chunks(batch) {
            let current = &*params;
            let results = exec.try_map(chunk, |&i| -> Result<SampleGrad<T>> {
                let mut tape = Tape::new();
                let vars = current.bind(&mut tape);
                let out = forward(&mut tape, &vars, &samples[i])?;
                let loss = tape.value(out.loss).data()[0].as_f64();
                if !loss.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "{label}: loss {loss} at epoch {epoch}, sample {i}"
                    )));
                }
                tape.backward(out.loss)?;
                Ok(SampleGrad {
                    loss,
                    correct: out.correct,
                    grads: vars.iter().map(|&v| tape.grad_or_zeros(v)).collect(),
                })
            })?;

            let mut total: Vec<Tensor<T>> = params
                .tensors()
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect();
            for r in &results {
                loss_sum += r.loss;
                if let Some(c) = r.correct {
                    n_scored += 1;
                    n_correct += usize::from(c);
                }
                for (acc, g) in total.iter_mut().zip(&r.grads) {
                    for (a, &v) in acc.data_mut().iter_mut().zip(g.data()) {
                        *a += v;
                    }
                }
            }
            let inv = T::one() / T::lit(results.len() as f64);
            for t in &mut total {
                t.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            if let Some(max) = cfg.clip_norm {
                clip_global_norm(&mut total, max);
            }
            opt.step(params, &total);
            if !params.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{label}: parameters diverged at epoch {epoch}"
                )));
            }
        }
        let stat = EpochStat {
            epoch,
            loss: loss_sum / samples.len() as f64,
            train_acc: (n_scored > 0).then(|| n_correct as f64 / n_scored as f64),
        };
        log::debug!(
            "{label} epoch {epoch}: loss {:.5}{}",
            stat.loss,
            stat.train_acc
                .map(|a| format!(", train acc {a:.3}"))
                .unwrap_or_default()
        );
        log.epochs.push(stat);
    }
    if let Some(last) = log.epochs.last() {
        log::info!(
            "{label}: {} epochs, final loss {:.5}",
            cfg.epochs,
            last.loss
        );
    }
    Ok(log)
}

fn clip_global_norm<T: Real>(grads: &mut [Tensor<T>], max: f64) {
    let norm = grads
        .iter()
        .flat_map(|g| g.data())
        .map(|&v| v.as_f64() * v.as_f64())
        .sum::<f64>()
        .sqrt();
    if norm > max {
        let scale = T::lit(max / norm);
        for g in grads {
            g.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}
