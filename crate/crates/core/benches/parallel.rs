//! Sequential versus rayon execution of the per-item hot paths.
//!
//! Without the `parallel` feature both variants run sequentially.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use milg_core::asg::{predict_all, AsgConfig, AsgModel};
use milg_core::autoencoder::{featurize, AutoEncoder, EncoderConfig};
use milg_core::graph::{build_graph, PatchGraph};
use milg_core::mil::{Bag, MilConfig, MilModel};
use milg_core::synth::{generate_synthetic, SyntheticSpec};
use milg_core::tensor::Tensor;
use milg_core::tiling::{tile, Patch, TileConfig};
use milg_core::Exec;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Exec); 2] = [
    ("sequential", Exec::Sequential),
    ("parallel", Exec::Parallel),
];

fn patches() -> Vec<Patch> {
    let spec = SyntheticSpec {
        n_bags: 2,
        ..SyntheticSpec::default()
    };
    generate_synthetic(&spec)
        .unwrap()
        .iter()
        .flat_map(|b| {
            tile(&b.slide_id, &b.image, &TileConfig::default())
                .unwrap()
                .patches
        })
        .collect()
}

fn random_bags(n: usize, patches: usize, dim: usize) -> Vec<Bag> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n)
        .map(|b| {
            let data = (0..patches * dim)
                .map(|_| rng.gen_range(-1.0..1.0))
                .collect();
            let coords = (0..patches)
                .map(|i| [(i % 8) as f64 * 32.0 + 16.0, (i / 8) as f64 * 32.0 + 16.0])
                .collect();
            Bag::new(
                format!("b{b}"),
                Tensor::new(vec![patches, dim], data).unwrap(),
                coords,
                b % 4,
            )
            .unwrap()
        })
        .collect()
}

fn bench_featurize(c: &mut Criterion) {
    let patches = patches();
    let ae = AutoEncoder::<f32>::init(EncoderConfig::default()).unwrap();
    let mut group = c.benchmark_group("featurize_128_patches");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| featurize(&patches, &ae, exec).unwrap())
        });
    }
    group.finish();
}

fn bench_attend(c: &mut Criterion) {
    let bags = random_bags(64, 64, 64);
    let model = MilModel::<f32>::init(
        64,
        MilConfig {
            n_classes: 4,
            ..MilConfig::default()
        },
    )
    .unwrap();
    let mut group = c.benchmark_group("attend_64_bags");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| exec.map(&bags, |bag| model.attend(&bag.features).unwrap()))
        });
    }
    group.finish();
}

fn bench_graph_inference(c: &mut Criterion) {
    let bags = random_bags(32, 64, 64);
    let selected: Vec<usize> = (0..39).collect();
    let graphs: Vec<PatchGraph> = bags
        .iter()
        .map(|b| build_graph(b, &selected, &b.features, 10).unwrap())
        .collect();
    let model = AsgModel::<f32>::init(
        64,
        AsgConfig {
            n_classes: 4,
            ..AsgConfig::default()
        },
    )
    .unwrap();
    let mut group = c.benchmark_group("graph_inference_32_graphs");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| predict_all(&model, &graphs, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_featurize, bench_attend, bench_graph_inference
}
criterion_main!(benches);
