//! Named parameter sets, initialisation and first-order optimisers.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tape, Tensor, Var};

/// Ordered collection of named trainable tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSet<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> Default for ParamSet<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.names.push(name.into());
        self.tensors.push(t);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    /// Like [`get`](Self::get) but fails with a descriptive error.
    pub fn require(&self, name: &str, shape: &[usize]) -> Result<&Tensor<T>> {
        let t = self
            .get(name)
            .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))?;
        if t.shape() != shape {
            return Err(Error::shape(
                "parameter",
                format!("{name} has shape {:?}, expected {shape:?}", t.shape()),
            ));
        }
        Ok(t)
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Places every tensor on the tape as a trainable leaf, in order.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    pub fn cast<U: Real>(&self) -> ParamSet<U> {
        ParamSet {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }
}

/// `uniform(-1/√fan_in, 1/√fan_in)` initialised tensor.
pub fn uniform_init<T: Real, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::lit(rng.gen_range(-bound..bound)))
        .collect();
    Tensor::new(shape.to_vec(), data).expect("shape product matches")
}

/// Update rule used by a training run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerKind {
    pub fn sgd_momentum() -> Self {
        OptimizerKind::Sgd { momentum: 0.9 }
    }

    pub fn adam() -> Self {
        OptimizerKind::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Stateful optimiser bound to one [`ParamSet`] layout.
pub struct Optimizer<T> {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
    steps: i32,
}

impl<T: Real> Optimizer<T> {
    pub fn new(kind: OptimizerKind, lr: f64, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .tensors()
                .iter()
                .map(|t| vec![T::zero(); t.len()])
                .collect()
        };
        Self {
            kind,
            lr,
            weight_decay: 0.0,
            first: zeros(),
            second: match kind {
                OptimizerKind::Adam { .. } => zeros(),
                OptimizerKind::Sgd { .. } => Vec::new(),
            },
            steps: 0,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    /// Shrinks every weight by `lr * decay` per step, apart from the
    /// gradient update.
    pub fn with_weight_decay(mut self, decay: f64) -> Self {
        self.weight_decay = decay;
        self
    }

    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) {
        debug_assert_eq!(grads.len(), params.len());
        self.steps += 1;
        let lr = T::lit(self.lr);
        if self.weight_decay > 0.0 {
            let keep = T::one() - T::lit(self.lr * self.weight_decay);
            for p in params.tensors.iter_mut() {
                p.data_mut().iter_mut().for_each(|w| *w *= keep);
            }
        }
        match self.kind {
            OptimizerKind::Sgd { momentum } => {
                let mu = T::lit(momentum);
                for ((p, g), vel) in params.tensors.iter_mut().zip(grads).zip(&mut self.first) {
                    for ((w, &d), v) in p.data_mut().iter_mut().zip(g.data()).zip(vel.iter_mut()) {
                        *v = mu * *v + d;
                        *w -= lr * *v;
                    }
                }
            }
            OptimizerKind::Adam { beta1, beta2, eps } => {
                let (b1, b2) = (T::lit(beta1), T::lit(beta2));
                let c1 = T::one() - T::lit(beta1.powi(self.steps));
                let c2 = T::one() - T::lit(beta2.powi(self.steps));
                let eps = T::lit(eps);
                for (((p, g), m), v) in params
                    .tensors
                    .iter_mut()
                    .zip(grads)
                    .zip(&mut self.first)
                    .zip(&mut self.second)
                {
                    for (((w, &d), mi), vi) in p
                        .data_mut()
                        .iter_mut()
                        .zip(g.data())
                        .zip(m.iter_mut())
                        .zip(v.iter_mut())
                    {
                        *mi = b1 * *mi + (T::one() - b1) * d;
                        *vi = b2 * *vi + (T::one() - b2) * d * d;
                        let mhat = *mi / c1;
                        let vhat = *vi / c2;
                        *w -= lr * mhat / (vhat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadratic_descent(kind: OptimizerKind, lr: f64) -> f64 {
        // minimise sum((w - 3)^2)
        let mut ps = ParamSet::<f64>::new();
        ps.push("w", Tensor::zeros(&[4]));
        let mut opt = Optimizer::new(kind, lr, &ps);
        for _ in 0..500 {
            let g: Vec<f64> = ps.tensors()[0]
                .data()
                .iter()
                .map(|w| 2.0 * (w - 3.0))
                .collect();
            opt.step(&mut ps, &[Tensor::new(vec![4], g).unwrap()]);
        }
        ps.tensors()[0]
            .data()
            .iter()
            .map(|w| (w - 3.0).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn optimisers_converge_on_a_quadratic() {
        assert!(quadratic_descent(OptimizerKind::sgd_momentum(), 0.01) < 1e-3);
        assert!(quadratic_descent(OptimizerKind::adam(), 0.05) < 1e-3);
    }

    #[test]
    fn weight_decay_shrinks_without_gradient() {
        let mut ps = ParamSet::<f64>::new();
        ps.push("w", Tensor::new(vec![2], vec![1.0, -2.0]).unwrap());
        let mut opt = Optimizer::new(OptimizerKind::adam(), 0.1, &ps).with_weight_decay(0.5);
        opt.step(&mut ps, &[Tensor::zeros(&[2])]);
        assert_eq!(ps.tensors()[0].data(), &[0.95, -1.9]);
    }

    #[test]
    fn uniform_init_respects_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let t: Tensor<f64> = uniform_init(&mut rng, &[16, 25], 25);
        assert!(t.data().iter().all(|v| v.abs() <= 0.2));
    }

    #[test]
    fn require_checks_shape() {
        let mut ps = ParamSet::<f32>::new();
        ps.push("a", Tensor::zeros(&[2, 3]));
        assert!(ps.require("a", &[2, 3]).is_ok());
        assert!(ps.require("a", &[3, 2]).is_err());
        assert!(ps.require("b", &[1]).is_err());
    }
}
