//! One function per subcommand. Every stage reads its inputs from and
//! writes its outputs to the workspace tree, so stages can be rerun alone.

use std::path::Path;

use log::{info, warn};
use serde::Serialize;

use milg_core::asg::{predict_all, train_gcn, AsgConfig, AsgModel, ScoreGate};
use milg_core::autoencoder::{featurize, train_autoencoder, AutoEncoder, EncoderConfig};
use milg_core::checkpoint::Checkpoint;
use milg_core::graph::{build_graph, read_graph, write_graph, PatchGraph};
use milg_core::heatmap::{attention_overlay, graph_overlay};
use milg_core::io::{read_csv, read_features, write_csv, write_features};
use milg_core::metrics::{compute_metrics, MetricsReport};
use milg_core::mil::{
    read_scores, score_records, select_top, train_mil, write_scores, Bag, MilConfig, MilModel,
};
use milg_core::optim::OptimizerKind;
use milg_core::pipeline::{kfold_run, sweep, write_sweep, PipelineConfig, SweepAxis};
use milg_core::raster::RgbImage;
use milg_core::synth::{generate_bag, write_truth, Layout, SyntheticSpec};
use milg_core::tiling::{
    coord_records, patches_from_coords, read_coords, tile, write_coords, CoordRecord, Patch,
    TileConfig,
};
use milg_core::{Error, Exec, Result};

use crate::cli::*;
use crate::layout::Workspace;
use crate::manifest::{Manifest, ManifestRow};

pub struct Context {
    pub global: Global,
    pub ws: Workspace,
    pub exec: Exec,
}

impl Context {
    fn manifest(&self, args: &ManifestArgs) -> Result<Manifest> {
        let path = args.manifest.clone().unwrap_or_else(|| self.ws.manifest());
        if !path.exists() {
            return Err(Error::MissingArtifact {
                path: path.display().to_string(),
                what: "slide manifest (run `milg synth` or pass --manifest)".into(),
            });
        }
        let m = Manifest::read(&path)?;
        m.check_labels(self.classes(&m))?;
        Ok(m)
    }

    fn classes(&self, m: &Manifest) -> usize {
        self.global.classes.unwrap_or_else(|| m.inferred_classes())
    }

    fn tile_config(&self) -> TileConfig {
        TileConfig {
            patch_size: self.global.patch_size,
            tissue_percent: self.global.tissue_z,
        }
    }

    fn mil_config(&self, n_classes: usize) -> MilConfig {
        let mut cfg = MilConfig {
            proj_dim: self.global.proj_dim,
            att_dim: self.global.att_dim,
            n_classes,
            ..MilConfig::default()
        };
        cfg.train.seed = self.global.seed;
        cfg
    }

    fn asg_config(&self, n_classes: usize, opts: &GcnOptions) -> AsgConfig {
        let mut cfg = AsgConfig {
            num_modules: self.global.asg_modules,
            pool_ratio: self.global.pool_ratio,
            n_classes,
            ..AsgConfig::default()
        };
        if let Some(h) = opts.hidden {
            cfg.hidden_width = h;
        }
        if let Some(g) = opts.gate {
            cfg.gate = match g {
                GateArg::Relu => ScoreGate::Relu,
                GateArg::Sigmoid => ScoreGate::Sigmoid,
                GateArg::Tanh => ScoreGate::Tanh,
            };
        }
        if let Some(e) = opts.gcn_epochs {
            cfg.train.epochs = e;
        }
        if let Some(lr) = opts.gcn_lr {
            cfg.train.learning_rate = lr;
        }
        if let Some(o) = opts.gcn_optimizer {
            cfg.train.optimizer = match o {
                OptimizerArg::Sgd => OptimizerKind::sgd_momentum(),
                OptimizerArg::Adam => OptimizerKind::adam(),
            };
        }
        cfg.train.seed = self.global.seed;
        cfg
    }

    fn pipeline_config(&self, n_classes: usize, opts: &CvOptions) -> PipelineConfig {
        let mut mil = self.mil_config(n_classes);
        if let Some(e) = opts.mil_epochs {
            mil.train.epochs = e;
        }
        PipelineConfig {
            mil,
            asg: self.asg_config(n_classes, &opts.gcn),
            top_percent: self.global.top_s,
            knn_k: self.global.knn_k,
        }
    }

    /// Runs `f` on every slide in parallel; outputs keep manifest order.
    fn per_slide<O: Send>(
        &self,
        m: &Manifest,
        f: impl Fn(&ManifestRow) -> Result<O> + Sync + Send,
    ) -> Result<Vec<O>> {
        self.exec.try_map(&m.rows, |r| f(r))
    }

    fn coords(&self, slide: &str) -> Result<Vec<CoordRecord>> {
        require(&self.ws.coords(slide), "milg tile")?;
        read_coords(self.ws.coords(slide))
    }

    fn patches(&self, m: &Manifest, row: &ManifestRow) -> Result<Vec<Patch>> {
        let coords = self.coords(&row.slide_id)?;
        let image = RgbImage::load(m.image_path(row))?;
        patches_from_coords(&row.slide_id, &image, &coords, self.global.patch_size)
    }

    fn centres(&self, coords: &[CoordRecord]) -> Vec<[f64; 2]> {
        coords
            .iter()
            .map(|c| c.center(self.global.patch_size))
            .collect()
    }

    /// Bag of stored patch features for every slide.
    fn bags(&self, m: &Manifest) -> Result<Vec<Bag>> {
        self.per_slide(m, |r| {
            require(&self.ws.features(&r.slide_id), "milg featurize")?;
            let features = read_features(self.ws.features(&r.slide_id))?;
            let coords = self.coords(&r.slide_id)?;
            Bag::new(r.slide_id.clone(), features, self.centres(&coords), r.label)
        })
    }

    fn graphs(&self, m: &Manifest) -> Result<Vec<PatchGraph>> {
        self.per_slide(m, |r| {
            require(&self.ws.graph(&r.slide_id), "milg build-graph")?;
            read_graph(self.ws.slide_dir(&r.slide_id), &r.slide_id, r.label)
        })
    }
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingArtifact {
            path: path.display().to_string(),
            what: format!("produced by `{producer}`"),
        })
    }
}

fn load_checkpoint(
    ws: &Workspace,
    name: &str,
    producer: &str,
) -> Result<(Checkpoint, std::path::PathBuf)> {
    let path = ws.model(name);
    require(&path, producer)?;
    Ok((Checkpoint::load(&path)?, path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.display().to_string(),
            source: e,
        })?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn synth(ctx: &Context, args: &SynthArgs) -> Result<()> {
    let mut spec = SyntheticSpec {
        n_bags: args.bags,
        grid_size: args.grid,
        patch_size: ctx.global.patch_size,
        n_classes: ctx.global.classes.unwrap_or(2),
        motif_region_fraction: args.region_fraction,
        noise_level: args.noise,
        layout: match args.layout {
            LayoutArg::Region => Layout::Region,
            LayoutArg::Adjacency => Layout::Adjacency {
                min_gap: args.min_gap,
            },
        },
        seed: ctx.global.seed,
        ..SyntheticSpec::default()
    };
    if let Some(share) = args.secondary_share {
        spec.secondary_share = share;
    }
    spec.validate()?;
    let ws = &ctx.ws;
    let ext = args.format.extension();
    let rows = ctx
        .exec
        .try_map_range(spec.n_bags, |i| -> Result<ManifestRow> {
            let bag = generate_bag(&spec, i)?;
            let rel = format!("raw/{}.{ext}", bag.slide_id);
            bag.image.save(ws.root().join(&rel))?;
            write_truth(ws.truth(&bag.slide_id), &bag, spec.grid_size)?;
            Ok(ManifestRow {
                slide_id: bag.slide_id,
                path: rel,
                label: bag.label,
            })
        })?;
    Manifest::new(rows, ws.root())?.write(&ws.manifest())?;
    write_json(&ws.synth_spec(), &spec)?;
    info!(
        "wrote {} synthetic slides to {}",
        spec.n_bags,
        ws.root().display()
    );
    Ok(())
}

pub fn tile_slides(ctx: &Context, args: &ManifestArgs) -> Result<()> {
    let m = ctx.manifest(args)?;
    let cfg = ctx.tile_config();
    let counts = ctx.per_slide(&m, |r| {
        let image = RgbImage::load(m.image_path(r))?;
        let tiling = tile(&r.slide_id, &image, &cfg)?;
        if tiling.patches.is_empty() {
            return Err(Error::Dataset(format!(
                "{}: no patch reaches {}% tissue",
                r.slide_id, cfg.tissue_percent
            )));
        }
        write_coords(ctx.ws.coords(&r.slide_id), &coord_records(&tiling.patches))?;
        Ok(tiling.patches.len())
    })?;
    info!(
        "tiled {} slides into {} patches",
        counts.len(),
        counts.iter().sum::<usize>()
    );
    Ok(())
}

pub fn train_ae(ctx: &Context, args: &AeArgs) -> Result<()> {
    let m = ctx.manifest(&args.train.manifest)?;
    let patches: Vec<Patch> = ctx
        .per_slide(&m, |r| ctx.patches(&m, r))?
        .into_iter()
        .flatten()
        .collect();
    let mut cfg = EncoderConfig {
        patch_size: ctx.global.patch_size,
        latent_dim: ctx.global.latent_dim,
        max_train_patches: (args.max_patches > 0).then_some(args.max_patches),
        seed: ctx.global.seed,
        ..EncoderConfig::default()
    };
    if let Some(e) = args.train.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = args.train.lr {
        cfg.learning_rate = lr;
    }
    if let Some(b) = args.train.batch {
        cfg.batch_size = b;
    }
    let (ae, log) = train_autoencoder(&patches, &cfg, ctx.exec)?;
    ae.to_checkpoint()?.save(ctx.ws.model("ae"))?;
    log.write_csv(ctx.ws.train_log("ae"))?;
    info!(
        "autoencoder trained on {} patches: loss {:.5} -> {:.5}",
        patches.len(),
        log.first_loss().unwrap_or(f64::NAN),
        log.last_loss().unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn featurize_slides(ctx: &Context, args: &FeaturizeArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    if let Some(dir) = &args.import {
        ctx.per_slide(&m, |r| {
            let src = dir.join(format!("{}.bin", r.slide_id));
            require(&src, "the external feature extractor")?;
            let features = read_features(&src)?;
            let n = ctx.coords(&r.slide_id)?.len();
            if features.rows() != n {
                return Err(Error::Dataset(format!(
                    "{}: {} imported feature rows for {n} patches",
                    src.display(),
                    features.rows()
                )));
            }
            write_features(ctx.ws.features(&r.slide_id), &features)
        })?;
        info!("imported features for {} slides", m.rows.len());
        return Ok(());
    }
    let (ck, path) = load_checkpoint(&ctx.ws, "ae", "milg train-ae")?;
    let ae = AutoEncoder::from_checkpoint(&ck, &path)?;
    if ae.config().patch_size != ctx.global.patch_size {
        return Err(Error::InvalidArgument(format!(
            "autoencoder was trained on {0}x{0} patches, --patch-size is {1}",
            ae.config().patch_size,
            ctx.global.patch_size
        )));
    }
    // slides run one after another; each slide's patches fan out inside
    for r in &m.rows {
        let patches = ctx.patches(&m, r)?;
        write_features(
            ctx.ws.features(&r.slide_id),
            &featurize(&patches, &ae, ctx.exec)?,
        )?;
    }
    info!("featurized {} slides", m.rows.len());
    Ok(())
}

pub fn train_mil_model(ctx: &Context, args: &TrainArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    let bags = ctx.bags(&m)?;
    let mut cfg = ctx.mil_config(ctx.classes(&m));
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(lr) = args.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    let (model, log) = train_mil(&bags, &cfg, ctx.exec)?;
    model.to_checkpoint()?.save(ctx.ws.model("mil"))?;
    log.write_csv(ctx.ws.train_log("mil"))?;
    info!(
        "attention model: final loss {:.5}, train accuracy {:.3}",
        log.last_loss().unwrap_or(f64::NAN),
        log.epochs
            .last()
            .and_then(|e| e.train_acc)
            .unwrap_or(f64::NAN)
    );
    Ok(())
}

pub fn score(ctx: &Context, args: &ManifestArgs) -> Result<()> {
    let m = ctx.manifest(args)?;
    let (ck, path) = load_checkpoint(&ctx.ws, "mil", "milg train-mil")?;
    let model = MilModel::from_checkpoint(&ck, &path)?;
    let bags = ctx.bags(&m)?;
    let selected = ctx.exec.try_map(&bags, |b| -> Result<usize> {
        let (att, projected) = model.attend_with_projection(&b.features)?;
        let selected = select_top(&att.scores, ctx.global.top_s)?;
        write_scores(
            ctx.ws.scores(&b.slide_id),
            &score_records(&att.scores, &selected),
        )?;
        write_features(ctx.ws.projected(&b.slide_id), &projected)?;
        Ok(selected.len())
    })?;
    info!(
        "scored {} slides, {} patches selected at S={}%",
        bags.len(),
        selected.iter().sum::<usize>(),
        ctx.global.top_s
    );
    Ok(())
}

pub fn build_graphs(ctx: &Context, args: &GraphArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    let bags = ctx.bags(&m)?;
    let edges = ctx.exec.try_map(&bags, |b| {
        require(&ctx.ws.scores(&b.slide_id), "milg score")?;
        let scores = read_scores(ctx.ws.scores(&b.slide_id))?;
        if scores.len() != b.len() {
            return Err(Error::Dataset(format!(
                "{}: {} scores for {} patches (rerun `milg score`)",
                b.slide_id,
                scores.len(),
                b.len()
            )));
        }
        let selected: Vec<usize> = scores
            .iter()
            .filter(|s| s.selected != 0)
            .map(|s| s.patch_id)
            .collect();
        let features = match args.node_features {
            NodeFeatures::Projected => {
                require(&ctx.ws.projected(&b.slide_id), "milg score")?;
                read_features(ctx.ws.projected(&b.slide_id))?
            }
            NodeFeatures::Raw => b.features.clone(),
        };
        let g = build_graph(b, &selected, &features, ctx.global.knn_k)?;
        write_graph(ctx.ws.slide_dir(&b.slide_id), &g)?;
        Ok(g.adjacency.edges().len())
    })?;
    info!(
        "built {} graphs with {} edges in total (K={})",
        bags.len(),
        edges.iter().sum::<usize>(),
        ctx.global.knn_k
    );
    Ok(())
}

pub fn train_gcn_model(ctx: &Context, args: &GcnArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    let graphs = ctx.graphs(&m)?;
    let mut cfg = ctx.asg_config(ctx.classes(&m), &args.gcn);
    if let Some(b) = args.batch {
        cfg.train.batch_size = b;
    }
    let (model, log) = train_gcn(&graphs, &cfg, ctx.exec)?;
    model.to_checkpoint()?.save(ctx.ws.model("asg"))?;
    log.write_csv(ctx.ws.train_log("asg"))?;
    info!(
        "graph model: final loss {:.5}, train accuracy {:.3}",
        log.last_loss().unwrap_or(f64::NAN),
        log.epochs
            .last()
            .and_then(|e| e.train_acc)
            .unwrap_or(f64::NAN)
    );
    Ok(())
}

/// One line of `predictions.csv`.
#[derive(Serialize)]
struct PredictionRow<'a> {
    slide_id: &'a str,
    label: usize,
    predicted: usize,
    attention_predicted: Option<usize>,
    fold: Option<usize>,
}

fn write_reports(ctx: &Context, report: &MetricsReport) -> Result<()> {
    report.write_json(ctx.ws.report("metrics.json"))?;
    report.write_confusion(ctx.ws.report("confusion.csv"))?;
    info!(
        "accuracy {:.4}, macro F1 {:.4}, kappa {:.4}",
        report.accuracy, report.macro_f1, report.cohen_kappa
    );
    Ok(())
}

pub fn eval(ctx: &Context, args: &EvalArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    let n_classes = ctx.classes(&m);
    if let Some(k) = args.cv {
        let bags = ctx.bags(&m)?;
        let cfg = ctx.pipeline_config(n_classes, &args.options);
        let r = kfold_run(&bags, k, &cfg, ctx.global.seed, ctx.exec)?;
        let rows: Vec<PredictionRow> = bags
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let fold = r.fold_of[i];
                let j = r.folds[fold]
                    .test
                    .iter()
                    .position(|&t| t == i)
                    .expect("bag tested in its fold");
                PredictionRow {
                    slide_id: &b.slide_id,
                    label: b.label,
                    predicted: r.predicted[i],
                    attention_predicted: Some(r.folds[fold].attention_predicted[j]),
                    fold: Some(fold),
                }
            })
            .collect();
        write_csv(ctx.ws.report("predictions.csv"), &rows)?;
        r.attention_aggregate
            .write_json(ctx.ws.report("attention_metrics.json"))?;
        let folds: Vec<&MetricsReport> = r.folds.iter().map(|f| &f.report).collect();
        write_json(&ctx.ws.report("folds.json"), &folds)?;
        info!(
            "attention-only accuracy {:.4}",
            r.attention_aggregate.accuracy
        );
        return write_reports(ctx, &r.aggregate);
    }
    let (ck, path) = load_checkpoint(&ctx.ws, "asg", "milg train-gcn")?;
    let model = AsgModel::from_checkpoint(&ck, &path)?;
    let graphs = ctx.graphs(&m)?;
    let predicted = predict_all(&model, &graphs, ctx.exec)?;
    let rows: Vec<PredictionRow> = graphs
        .iter()
        .zip(&predicted)
        .map(|(g, &p)| PredictionRow {
            slide_id: &g.slide_id,
            label: g.label,
            predicted: p,
            attention_predicted: None,
            fold: None,
        })
        .collect();
    write_csv(ctx.ws.report("predictions.csv"), &rows)?;
    let report = compute_metrics(&m.labels(), &predicted, n_classes)?;
    write_reports(ctx, &report)
}

pub fn run_sweep(ctx: &Context, args: &SweepArgs) -> Result<()> {
    let m = ctx.manifest(&args.manifest)?;
    let bags = ctx.bags(&m)?;
    let cfg = ctx.pipeline_config(ctx.classes(&m), &args.options);
    let axis = match args.axis {
        AxisArg::AsgModules => SweepAxis::AsgModules,
        AxisArg::K => SweepAxis::K,
        AxisArg::S => SweepAxis::SPercent,
    };
    let rows = sweep(
        &bags,
        axis,
        &args.values,
        &cfg,
        args.folds,
        ctx.global.seed,
        ctx.exec,
    )?;
    write_sweep(ctx.ws.report("sweep.csv"), &rows)?;
    for r in &rows {
        info!(
            "{}={}: accuracy {:.4}, kappa {:.4}",
            r.axis, r.value, r.accuracy, r.kappa
        );
    }
    Ok(())
}

pub fn heatmaps(ctx: &Context, args: &ManifestArgs) -> Result<()> {
    let m = ctx.manifest(args)?;
    let drawn = ctx.per_slide(&m, |r| {
        let id = &r.slide_id;
        require(&ctx.ws.scores(id), "milg score")?;
        let image = RgbImage::load(m.image_path(r))?;
        let coords = ctx.coords(id)?;
        let scores = read_scores(ctx.ws.scores(id))?;
        attention_overlay(&image, &coords, &scores, ctx.global.patch_size)?
            .save(ctx.ws.heatmap(id, "attention"))?;
        if ctx.ws.nodes(id).exists() {
            let nodes = read_csv(ctx.ws.nodes(id))?;
            let edges = read_csv(ctx.ws.graph(id))?;
            graph_overlay(&image, &coords, &nodes, &edges)?
                .image
                .save(ctx.ws.heatmap(id, "graph"))?;
            Ok(true)
        } else {
            warn!("{id}: no graph yet, only the attention overlay was drawn");
            Ok(false)
        }
    })?;
    info!(
        "rendered overlays for {} slides ({} with graphs)",
        drawn.len(),
        drawn.iter().filter(|&&g| g).count()
    );
    Ok(())
}
