//! Graph construction, convolution and pooling against exhaustive oracles,
//! plus gradients and training of the full graph network.

mod oracles;

use milg_core::asg::{
    gcn_layer, network_forward, predict_all, sag_pool, train_gcn, AsgConfig, AsgModel,
};
use milg_core::graph::{build_graph, knn_adjacency, Adjacency, PatchGraph};
use milg_core::optim::OptimizerKind;
use milg_core::tensor::{grad_check, Tensor};
use milg_core::Exec;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Inverse of `perm`: row `k` of `x.select_rows(perm)` is node `perm[k]`,
/// so the adjacency must send node `perm[k]` to `k`.
fn inverse(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (k, &i) in perm.iter().enumerate() {
        inv[i] = k;
    }
    inv
}

fn edge_set(adj: &Adjacency) -> std::collections::BTreeSet<(usize, usize)> {
    adj.edges()
        .into_iter()
        .map(|(i, j)| (i.min(j), i.max(j)))
        .collect()
}

#[test]
fn knn_matches_brute_force_on_random_point_sets() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for set in 0..100 {
        let n = rng.gen_range(1..60);
        let k = rng.gen_range(1..16);
        // every third set sits on a lattice so that distance ties occur
        let points: Vec<[f64; 2]> = (0..n)
            .map(|_| {
                if set % 3 == 0 {
                    [
                        rng.gen_range(0..6) as f64 * 32.0,
                        rng.gen_range(0..6) as f64 * 32.0,
                    ]
                } else {
                    [rng.gen_range(0.0..500.0), rng.gen_range(0.0..500.0)]
                }
            })
            .collect();
        assert_eq!(
            edge_set(&knn_adjacency(&points, k)),
            oracles::brute_force_knn(&points, k),
            "set {set}: n={n}, k={k}"
        );
    }
}

#[test]
fn build_graph_links_selected_patches_only() {
    let bag = &oracles::planted_bags(1, 2, 25, 3, 2, 4)[0];
    let selected = [0, 3, 7, 8, 12, 20];
    let g = build_graph(bag, &selected, &bag.features, 2).unwrap();
    let coords: Vec<[f64; 2]> = selected.iter().map(|&i| bag.coords[i]).collect();
    assert_eq!(edge_set(&g.adjacency), oracles::brute_force_knn(&coords, 2));
    assert_eq!(g.patch_ids, selected);
    assert_eq!(g.node_features.row(1), bag.features.row(3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn gcn_layer_matches_neighbour_sums(
        n in 1usize..=50, f_in in 1usize..6, f_out in 1usize..6, p in 0.0f64..0.5, seed in 0u64..10_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = oracles::random_graph(&mut rng, n, p);
        let g = oracles::random_tensor(&mut rng, &[n, f_in], 2.0);
        let w = oracles::random_tensor(&mut rng, &[f_in, f_out], 1.0);
        let got = gcn_layer(&g, &adj, &w).unwrap();
        let want = oracles::neighbour_sum_gcn(&oracles::rows(&g), &adj, &oracles::rows(&w));
        for (i, row) in want.iter().enumerate() {
            for (o, v) in row.iter().enumerate() {
                prop_assert!((got.at(i, o) - v).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gcn_layer_is_permutation_equivariant(n in 1usize..30, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = oracles::random_graph(&mut rng, n, 0.3);
        let g = oracles::random_tensor(&mut rng, &[n, 4], 1.0);
        let w = oracles::random_tensor(&mut rng, &[4, 3], 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let direct = gcn_layer(&g, &adj, &w).unwrap().select_rows(&perm).unwrap();
        let permuted = gcn_layer(&g.select_rows(&perm).unwrap(), &adj.permuted(&inverse(&perm)), &w).unwrap();
        prop_assert!(direct.max_abs_diff(&permuted) < 1e-9);
    }

    #[test]
    fn edgeless_graph_reduces_to_a_dense_layer(n in 1usize..20, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = oracles::random_tensor(&mut rng, &[n, 3], 1.0);
        let w = oracles::random_tensor(&mut rng, &[3, 2], 1.0);
        let got = gcn_layer(&g, &Adjacency::empty(n), &w).unwrap();
        let mut dense = g.matmul(&w).unwrap();
        dense.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
        prop_assert!(got.max_abs_diff(&dense) < 1e-12);
    }

    #[test]
    fn sag_pool_keeps_ceil_and_stays_symmetric(
        n in 1usize..50, d in 0.05f64..0.95, p in 0.0f64..0.5, seed in 0u64..10_000,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = oracles::random_graph(&mut rng, n, p);
        let g = oracles::random_tensor(&mut rng, &[n, 3], 1.0);
        let w = oracles::random_tensor(&mut rng, &[3, 1], 1.0);
        let pooled = sag_pool(&g, &adj, &w, d).unwrap();
        let expected = ((d * n as f64).ceil() as usize).max(1);
        prop_assert!(pooled.kept.len() == expected || pooled.kept.len() + 1 == expected,
            "kept {} for n={n}, d={d}", pooled.kept.len());
        prop_assert!(pooled.adjacency.is_symmetric());
        prop_assert_eq!(pooled.adjacency.len(), pooled.kept.len());
        prop_assert!(pooled.kept.windows(2).all(|w| w[0] < w[1]));
        // every dropped node scores no higher than every kept one
        let kept_min = pooled.kept.iter().map(|&i| pooled.scores[i]).fold(f64::INFINITY, f64::min);
        for i in (0..n).filter(|i| !pooled.kept.contains(i)) {
            prop_assert!(pooled.scores[i] <= kept_min);
        }
        for (r, &i) in pooled.kept.iter().enumerate() {
            for c in 0..3 {
                prop_assert!((pooled.features.at(r, c) - g.at(i, c) * pooled.scores[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn network_output_ignores_node_order(n in 2usize..25, seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let adj = oracles::random_graph(&mut rng, n, 0.3);
        // non-negative data keeps every score positive, so top-k has no ties
        let positive = |mut t: Tensor<f64>| {
            t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.01);
            t
        };
        let x = positive(oracles::random_tensor(&mut rng, &[n, 4], 1.0));
        let cfg = AsgConfig { num_modules: 3, hidden_width: 5, n_classes: 3, ..AsgConfig::default() };
        let mut params = milg_core::optim::ParamSet::new();
        let mut width = 4;
        for l in 0..3 {
            params.push(format!("module{l}.propagate"), positive(oracles::random_tensor(&mut rng, &[width, 5], 1.0)));
            params.push(format!("module{l}.score"), positive(oracles::random_tensor(&mut rng, &[5, 1], 1.0)));
            width = 5;
        }
        params.push("head", oracles::random_tensor(&mut rng, &[3, 5], 1.0));
        let model = AsgModel::from_params(4, cfg, params).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let a = model.forward(&x, &adj).unwrap();
        let b = model.forward(&x.select_rows(&perm).unwrap(), &adj.permuted(&inverse(&perm))).unwrap();
        for (u, v) in a.iter().zip(&b) {
            prop_assert!((u - v).abs() < 1e-6 * (1.0 + u.abs()));
        }
    }
}

#[test]
fn two_module_network_gradients_match_finite_differences() {
    let mut checked = 0;
    for instance in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + instance);
        let n = 6 + instance as usize % 6;
        let adj = oracles::random_graph(&mut rng, n, 0.4);
        let x = oracles::random_tensor(&mut rng, &[n, 3], 1.0);
        let cfg = AsgConfig {
            num_modules: 2,
            hidden_width: 4,
            n_classes: 3,
            ..AsgConfig::default()
        };
        let shapes: [&[usize]; 5] = [&[3, 4], &[4, 1], &[4, 4], &[4, 1], &[3, 4]];
        // positive score weights keep the gates away from the ReLU kink
        let params: Vec<Tensor<f64>> = shapes
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let mut t = oracles::random_tensor(&mut rng, s, 1.0);
                if i % 2 == 1 && i < 4 {
                    t.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.1);
                }
                t
            })
            .collect();
        let label = instance as usize % 3;
        let report = grad_check(
            |tape, v| {
                let xv = tape.constant(x.clone());
                let logits = network_forward(tape, v, &cfg, xv, &adj)?;
                let p = tape.softmax(logits)?;
                tape.cross_entropy(p, label)
            },
            &params,
            1e-6,
            usize::MAX,
            instance,
        )
        .unwrap();
        assert!(
            report.max_rel_error < 1e-4,
            "instance {instance}: relative error {}",
            report.max_rel_error
        );
        checked += 1;
    }
    assert_eq!(checked, 20);
}

fn separable_graphs(count: usize, seed: u64) -> Vec<PatchGraph> {
    let bags = oracles::planted_bags(count, 2, 16, 4, 6, seed);
    bags.iter()
        .map(|b| {
            let all: Vec<usize> = (0..b.len()).collect();
            build_graph(b, &all, &b.features, 4).unwrap()
        })
        .collect()
}

#[test]
fn learns_separable_graphs() {
    let graphs = separable_graphs(40, 21);
    let mut cfg = AsgConfig {
        num_modules: 4,
        hidden_width: 16,
        n_classes: 2,
        ..AsgConfig::default()
    };
    cfg.train.epochs = 200;
    cfg.train.optimizer = OptimizerKind::adam();
    cfg.train.seed = 3;
    let (model, _) = train_gcn(&graphs, &cfg, Exec::Parallel).unwrap();
    let predicted = predict_all(&model, &graphs, Exec::Parallel).unwrap();
    let correct = predicted
        .iter()
        .zip(&graphs)
        .filter(|(p, g)| **p == g.label)
        .count();
    assert!(
        correct as f64 / graphs.len() as f64 >= 0.95,
        "training accuracy {correct}/40"
    );
}

#[test]
fn graph_training_is_deterministic_across_executors() {
    let graphs = separable_graphs(10, 8);
    let mut cfg = AsgConfig {
        num_modules: 2,
        hidden_width: 6,
        n_classes: 2,
        ..AsgConfig::default()
    };
    cfg.train.epochs = 3;
    let (a, la) = train_gcn(&graphs, &cfg, Exec::Sequential).unwrap();
    let (b, lb) = train_gcn(&graphs, &cfg, Exec::Parallel).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(la, lb);
}
