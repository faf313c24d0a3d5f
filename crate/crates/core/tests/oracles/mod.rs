//! Straight-line reference implementations used as test oracles.
//!
//! Each one is written from the definition with plain loops over `f64`
//! and shares no code with the library beyond its data types.

#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::BTreeSet;

use milg_core::graph::Adjacency;
use milg_core::mil::Bag;
use milg_core::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rows(t: &Tensor<f64>) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn random_tensor(rng: &mut impl Rng, shape: &[usize], bound: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
    .unwrap()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        s += a[k] * b[k];
    }
    s
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Gated attention written patch by patch.
///
/// Weights are `w_proj [P, D]`, `v [A, P]`, `q [A, P]`, `k [1, A]` and
/// `w_cls [C, P]`. Returns the attention scores and the bag logits.
pub fn gated_attention(weights: &[Tensor<f64>], x: &[Vec<f64>]) -> (Vec<f64>, Vec<f64>) {
    let (wp, v, q, k, wc) = (
        rows(&weights[0]),
        rows(&weights[1]),
        rows(&weights[2]),
        rows(&weights[3]),
        rows(&weights[4]),
    );
    let h: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| wp.iter().map(|w| dot(w, xi)).collect())
        .collect();
    let mut e = Vec::with_capacity(h.len());
    for hi in &h {
        let mut s = 0.0;
        for a in 0..v.len() {
            s += k[0][a] * dot(&v[a], hi).tanh() * sigmoid(dot(&q[a], hi));
        }
        e.push(s);
    }
    let top = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let z: f64 = e.iter().map(|s| (s - top).exp()).sum();
    let scores: Vec<f64> = e.iter().map(|s| (s - top).exp() / z).collect();
    let mut embedding = vec![0.0; wp.len()];
    for (hi, a) in h.iter().zip(&scores) {
        for p in 0..embedding.len() {
            embedding[p] += a * hi[p];
        }
    }
    let logits = wc.iter().map(|w| dot(w, &embedding)).collect();
    (scores, logits)
}

/// One graph convolution evaluated node by node: every node averages its
/// closed neighbourhood with weights `1/sqrt((deg_i+1)(deg_j+1))`, then
/// the result is multiplied by `w` and rectified.
pub fn neighbour_sum_gcn(g: &[Vec<f64>], adjacency: &Adjacency, w: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = g.len();
    let deg: Vec<f64> = (0..n).map(|i| adjacency.degree(i) as f64 + 1.0).collect();
    let f_in = w.len();
    let f_out = w.first().map_or(0, Vec::len);
    let mut out = vec![vec![0.0; f_out]; n];
    for i in 0..n {
        let mut agg = vec![0.0; f_in];
        for j in 0..n {
            if i == j || adjacency.has(i, j) {
                let c = 1.0 / (deg[i] * deg[j]).sqrt();
                for f in 0..f_in {
                    agg[f] += c * g[j][f];
                }
            }
        }
        for o in 0..f_out {
            let mut s = 0.0;
            for f in 0..f_in {
                s += agg[f] * w[f][o];
            }
            out[i][o] = s.max(0.0);
        }
    }
    out
}

/// Undirected KNN edges `(i, j)` with `i < j`, by exhaustive search. Each
/// point links to its `k` nearest others, ties going to the lower index.
pub fn brute_force_knn(points: &[[f64; 2]], k: usize) -> BTreeSet<(usize, usize)> {
    let mut edges = BTreeSet::new();
    for i in 0..points.len() {
        let mut order: Vec<(f64, usize)> = Vec::new();
        for j in 0..points.len() {
            if j != i {
                let dx = points[i][0] - points[j][0];
                let dy = points[i][1] - points[j][1];
                order.push((dx * dx + dy * dy, j));
            }
        }
        order.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        for &(_, j) in order.iter().take(k) {
            edges.insert((i.min(j), i.max(j)));
        }
    }
    edges
}

/// Metrics from their definitions, one confusion cell at a time.
#[derive(Debug, PartialEq)]
pub struct DefinitionalMetrics {
    pub confusion: Vec<Vec<usize>>,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub sensitivity: f64,
    pub precision: f64,
    pub kappa: f64,
}

pub fn definitional_metrics(
    truth: &[usize],
    predicted: &[usize],
    n_classes: usize,
) -> DefinitionalMetrics {
    let n = truth.len() as f64;
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for t in 0..n_classes {
        for p in 0..n_classes {
            confusion[t][p] = (0..truth.len())
                .filter(|&s| truth[s] == t && predicted[s] == p)
                .count();
        }
    }
    let agree = (0..truth.len())
        .filter(|&s| truth[s] == predicted[s])
        .count();
    let (mut f1, mut rec, mut prec, mut present) = (0.0, 0.0, 0.0, 0usize);
    let mut chance = 0.0;
    for c in 0..n_classes {
        let actual = truth.iter().filter(|&&t| t == c).count();
        let called = predicted.iter().filter(|&&p| p == c).count();
        chance += actual as f64 * called as f64;
        if actual == 0 {
            continue;
        }
        present += 1;
        let hits = confusion[c][c] as f64;
        let r = hits / actual as f64;
        let p = if called == 0 {
            0.0
        } else {
            hits / called as f64
        };
        rec += r;
        prec += p;
        f1 += if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        };
    }
    let p_o = agree as f64 / n;
    let p_e = chance / (n * n);
    let kappa = if (1.0 - p_e).abs() < 1e-12 {
        0.0
    } else {
        (p_o - p_e) / (1.0 - p_e)
    };
    let k = present as f64;
    DefinitionalMetrics {
        confusion,
        accuracy: p_o,
        macro_f1: f1 / k,
        sensitivity: rec / k,
        precision: prec / k,
        kappa,
    }
}

/// Random undirected graph on `n` nodes with edge probability `p`.
pub fn random_graph(rng: &mut impl Rng, n: usize, p: f64) -> Adjacency {
    let mut adj = Adjacency::empty(n);
    for i in 0..n {
        for j in i + 1..n {
            if rng.gen_bool(p) {
                adj.connect(i, j);
            }
        }
    }
    adj
}

/// Bags whose class is carried by a few planted instances: every patch is
/// noise, and `hot` patches of each bag are shifted along a class-specific
/// axis. Patch centres lie on a square grid.
pub fn planted_bags(
    n_bags: usize,
    n_classes: usize,
    patches: usize,
    dim: usize,
    hot: usize,
    seed: u64,
) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = (patches as f64).sqrt().ceil() as usize;
    (0..n_bags)
        .map(|b| {
            let label = b % n_classes;
            let mut data = Vec::with_capacity(patches * dim);
            for i in 0..patches {
                for f in 0..dim {
                    let mut v: f64 = rng.gen_range(-0.5..0.5);
                    if i < hot && f == label {
                        v += 2.0;
                    }
                    data.push(v as f32);
                }
            }
            let features = Tensor::new(vec![patches, dim], data).unwrap();
            let coords = (0..patches)
                .map(|i| {
                    [
                        (i % side) as f64 * 32.0 + 16.0,
                        (i / side) as f64 * 32.0 + 16.0,
                    ]
                })
                .collect();
            Bag::new(format!("bag{b:03}"), features, coords, label).unwrap()
        })
        .collect()
}
