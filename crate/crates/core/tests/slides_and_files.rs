//! Synthetic slides, tiling, patch features, file round trips and
//! overlays.

mod oracles;

use milg_core::autoencoder::{featurize, AutoEncoder, EncoderConfig};
use milg_core::checkpoint::Checkpoint;
use milg_core::graph::{build_graph, EdgeRecord, NodeRecord};
use milg_core::heatmap::graph_overlay;
use milg_core::io::{features_from_bytes, features_to_bytes, read_features, write_features};
use milg_core::mil::{MilConfig, MilModel};
use milg_core::synth::{generate_bag, generate_synthetic, SyntheticSpec};
use milg_core::tensor::Tensor;
use milg_core::tiling::{coord_records, patches_from_coords, tile, CoordRecord, TileConfig};
use milg_core::Exec;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

fn noiseless(n_bags: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_bags,
        noise_level: 0.0,
        secondary_share: 0.0,
        ..SyntheticSpec::default()
    }
}

#[test]
fn noiseless_region_has_sixteen_motif_patches() {
    for bag in generate_synthetic(&noiseless(8)).unwrap() {
        assert_eq!(bag.membership().iter().filter(|&&m| m).count(), 16);
        assert!(bag.motif.iter().flatten().all(|&k| k == bag.label));
    }
}

#[test]
fn motif_and_background_patches_separate_by_mean_intensity() {
    let spec = noiseless(12);
    for bag in generate_synthetic(&spec).unwrap() {
        let tiling = tile(&bag.slide_id, &bag.image, &TileConfig::default()).unwrap();
        assert_eq!(tiling.patches.len(), 64);
        let mean = |px: &[u8]| px.iter().map(|&v| v as f64).sum::<f64>() / px.len() as f64;
        let member = bag.membership();
        let (mut motif, mut back) = (Vec::new(), Vec::new());
        for (p, &m) in tiling.patches.iter().zip(&member) {
            if m {
                motif.push(mean(&p.pixels))
            } else {
                back.push(mean(&p.pixels))
            }
        }
        let motif_max = motif.iter().cloned().fold(f64::MIN, f64::max);
        let motif_min = motif.iter().cloned().fold(f64::MAX, f64::min);
        let back_max = back.iter().cloned().fold(f64::MIN, f64::max);
        let back_min = back.iter().cloned().fold(f64::MAX, f64::min);
        assert!(
            motif_max < back_min || back_max < motif_min,
            "{}: overlapping statistics",
            bag.slide_id
        );
    }
}

#[test]
fn single_bags_match_the_full_generation() {
    let spec = SyntheticSpec {
        n_bags: 6,
        ..SyntheticSpec::default()
    };
    let all = generate_synthetic(&spec).unwrap();
    assert_eq!(generate_bag(&spec, 4).unwrap(), all[4]);
}

#[test]
fn re_cropping_from_coordinates_reproduces_tiling() {
    let bag = generate_bag(&SyntheticSpec::default(), 3).unwrap();
    let tiling = tile(&bag.slide_id, &bag.image, &TileConfig::default()).unwrap();
    let records = coord_records(&tiling.patches);
    let again = patches_from_coords(&bag.slide_id, &bag.image, &records, 32).unwrap();
    assert_eq!(again, tiling.patches);
    let outside = CoordRecord {
        origin_x: bag.image.width() - 8,
        ..records[0].clone()
    };
    assert!(patches_from_coords(&bag.slide_id, &bag.image, &[outside], 32).is_err());
}

#[test]
fn identical_patches_get_identical_features() {
    let bag = generate_bag(&noiseless(1), 0).unwrap();
    let tiling = tile(&bag.slide_id, &bag.image, &TileConfig::default()).unwrap();
    let twice = vec![tiling.patches[5].clone(), tiling.patches[5].clone()];
    let ae = AutoEncoder::<f32>::init(EncoderConfig {
        latent_dim: 8,
        ..EncoderConfig::default()
    })
    .unwrap();
    let seq = featurize(&twice, &ae, Exec::Sequential).unwrap();
    assert_eq!(seq.row(0), seq.row(1));
    assert_eq!(seq, featurize(&twice, &ae, Exec::Parallel).unwrap());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn feature_store_round_trip_is_byte_exact(rows in 0usize..20, cols in 1usize..12, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = oracles::random_tensor(&mut rng, &[rows, cols], 1e6).cast::<f32>();
        let bytes = features_to_bytes(&t).unwrap();
        let back = features_from_bytes(&bytes, Path::new("mem")).unwrap();
        prop_assert_eq!(&back, &t);
        prop_assert_eq!(features_to_bytes(&back).unwrap(), bytes);
    }
}

#[test]
fn feature_file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested").join("f.bin");
    let t = Tensor::<f32>::new(
        vec![2, 3],
        vec![0.5, -1.0, f32::MIN_POSITIVE, 3.25, 1e30, -0.0],
    )
    .unwrap();
    write_features(&path, &t).unwrap();
    assert_eq!(read_features(&path).unwrap().data(), t.data());
}

#[test]
fn checkpoint_round_trip_preserves_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mil.ckpt");
    let net = MilModel::<f32>::init(
        5,
        MilConfig {
            n_classes: 3,
            ..MilConfig::default()
        },
    )
    .unwrap();
    net.to_checkpoint().unwrap().save(&path).unwrap();
    let back = MilModel::from_checkpoint(&Checkpoint::load(&path).unwrap(), &path).unwrap();
    let x = oracles::random_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[7, 5], 1.0).cast::<f32>();
    assert_eq!(net.attend(&x).unwrap(), back.attend(&x).unwrap());
}

#[test]
fn complete_graph_overlay_draws_every_pair_once() {
    let bag = &oracles::planted_bags(1, 2, 9, 2, 1, 0)[0];
    for n in 1..=6 {
        let selected: Vec<usize> = (0..n).collect();
        // n <= K + 1 makes the KNN graph complete
        let g = build_graph(bag, &selected, &bag.features, 5).unwrap();
        let edges: Vec<EdgeRecord> = g
            .adjacency
            .edges()
            .into_iter()
            .map(|(src, dst)| EdgeRecord { src, dst })
            .collect();
        let nodes: Vec<NodeRecord> = (0..n)
            .map(|i| NodeRecord {
                node: i,
                patch_id: i,
                center_x: g.coords[i][0],
                center_y: g.coords[i][1],
            })
            .collect();
        let coords: Vec<CoordRecord> = (0..9)
            .map(|i| CoordRecord {
                patch_id: i,
                row: i / 3,
                col: i % 3,
                origin_x: (i % 3) * 32,
                origin_y: (i / 3) * 32,
                tissue_fraction: 1.0,
            })
            .collect();
        let image = milg_core::raster::RgbImage::filled(96, 96, [255, 255, 255]);
        let overlay = graph_overlay(&image, &coords, &nodes, &edges).unwrap();
        assert_eq!(overlay.edges_drawn, n * (n - 1) / 2);
    }
}

#[test]
fn graph_checkpoint_bytes_survive_a_reload() {
    use milg_core::asg::{AsgConfig, AsgModel, FeatureScaler};
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = oracles::random_tensor(&mut rng, &[40, 6], 3.0).cast::<f32>();
    let model = AsgModel::<f32>::init(6, AsgConfig::default())
        .unwrap()
        .with_scaler(Some(FeatureScaler::fit(&[&x]).unwrap()))
        .unwrap();
    let bytes = model.to_checkpoint().unwrap().to_bytes().unwrap();
    let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
    let reloaded = AsgModel::<f32>::from_checkpoint(&back, Path::new("mem")).unwrap();
    assert_eq!(reloaded.scaler(), model.scaler());
    assert_eq!(reloaded.to_checkpoint().unwrap().to_bytes().unwrap(), bytes);
}
