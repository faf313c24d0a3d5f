//! Command-line arguments.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(
    name = "milg",
    version,
    about = "Attention MIL patch scoring and graph classification of slide images",
    propagate_version = true
)]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

/// Settings shared by every subcommand.
#[derive(Args, Debug, Clone)]
pub struct Global {
    /// Output tree holding every artifact
    #[arg(long, global = true, default_value = "milg-out")]
    pub out: PathBuf,
    /// Seed of all randomness
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Patch side length in pixels
    #[arg(long, global = true, default_value_t = 32)]
    pub patch_size: usize,
    /// Minimum tissue percentage for a patch to be kept
    #[arg(long, global = true, default_value_t = 50.0)]
    pub tissue_z: f64,
    /// Autoencoder latent width
    #[arg(long, global = true, default_value_t = 64)]
    pub latent_dim: usize,
    /// Attention model projection width
    #[arg(long, global = true, default_value_t = 64)]
    pub proj_dim: usize,
    /// Attention hidden width
    #[arg(long, global = true, default_value_t = 32)]
    pub att_dim: usize,
    /// Percentage of top-scored patches kept per slide
    #[arg(long, global = true, default_value_t = 60.0)]
    pub top_s: f64,
    /// Neighbours per node in the patch graph
    #[arg(long, global = true, default_value_t = 10)]
    pub knn_k: usize,
    /// Number of graph modules
    #[arg(long, global = true, default_value_t = 8)]
    pub asg_modules: usize,
    /// Fraction of nodes kept by each pooling step
    #[arg(long, global = true, default_value_t = 0.8)]
    pub pool_ratio: f64,
    /// Number of classes (default: inferred from the manifest labels)
    #[arg(long, global = true)]
    pub classes: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic slide dataset with a manifest and ground truth
    Synth(SynthArgs),
    /// Cut every manifest slide into tissue patches
    Tile(ManifestArgs),
    /// Train the patch autoencoder
    TrainAe(AeArgs),
    /// Encode every patch into a feature vector
    Featurize(FeaturizeArgs),
    /// Train the attention model on slide labels
    TrainMil(TrainArgs),
    /// Score patches and select the top percentage
    Score(ManifestArgs),
    /// Link selected patches into spatial neighbour graphs
    BuildGraph(GraphArgs),
    /// Train the graph classifier
    TrainGcn(GcnArgs),
    /// Evaluate the graph classifier, or cross-validate the whole pipeline
    Eval(EvalArgs),
    /// Cross-validate over a range of one setting
    Sweep(SweepArgs),
    /// Render attention and graph overlays
    Heatmap(ManifestArgs),
}

#[derive(Args, Debug)]
pub struct ManifestArgs {
    /// Manifest CSV (`slide_id,path,label`); defaults to OUT/manifest.csv
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LayoutArg {
    Region,
    Adjacency,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ImageFormat::Png => "png",
            ImageFormat::Ppm => "ppm",
        }
    }
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub bags: usize,
    /// Patches per image side
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    /// Fraction of patches covered by the motif region
    #[arg(long, default_value_t = 0.25)]
    pub region_fraction: f64,
    /// Share of the region painted with a second, minority motif
    #[arg(long)]
    pub secondary_share: Option<f64>,
    /// Amplitude of uniform pixel noise, as a fraction of full scale
    #[arg(long, default_value_t = 0.05)]
    pub noise: f64,
    #[arg(long, value_enum, default_value_t = LayoutArg::Region)]
    pub layout: LayoutArg,
    /// Minimum patch distance between the two motifs of negative bags
    /// (adjacency layout)
    #[arg(long, default_value_t = 4.5)]
    pub min_gap: f64,
    #[arg(long, value_enum, default_value_t = ImageFormat::Png)]
    pub format: ImageFormat,
}

#[derive(Args, Debug, Clone)]
pub struct TrainArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
}

impl Clone for ManifestArgs {
    fn clone(&self) -> Self {
        Self {
            manifest: self.manifest.clone(),
        }
    }
}

#[derive(Args, Debug)]
pub struct AeArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Patches sampled for training (0 = all)
    #[arg(long, default_value_t = 512)]
    pub max_patches: usize,
}

#[derive(Args, Debug)]
pub struct FeaturizeArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// Take features from DIR/<slide_id>.bin (feature-store format) instead
    /// of the autoencoder
    #[arg(long, value_name = "DIR")]
    pub import: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum NodeFeatures {
    /// Attention-model projections of the patch features
    Projected,
    /// Patch features as stored by `featurize`
    Raw,
}

#[derive(Args, Debug)]
pub struct GraphArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[arg(long, value_enum, default_value_t = NodeFeatures::Projected)]
    pub node_features: NodeFeatures,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum GateArg {
    Relu,
    Sigmoid,
    Tanh,
}

/// Graph-classifier training overrides.
#[derive(Args, Debug, Clone)]
pub struct GcnOptions {
    #[arg(long)]
    pub gcn_epochs: Option<usize>,
    #[arg(long)]
    pub gcn_lr: Option<f64>,
    #[arg(long, value_enum)]
    pub gcn_optimizer: Option<OptimizerArg>,
    /// Activation of the pooling scores used as feature gates
    #[arg(long, value_enum)]
    pub gate: Option<GateArg>,
    /// Hidden width of the graph modules
    #[arg(long)]
    pub hidden: Option<usize>,
}

#[derive(Args, Debug)]
pub struct GcnArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[command(flatten)]
    pub gcn: GcnOptions,
    #[arg(long)]
    pub batch: Option<usize>,
}

/// Settings of a cross-validated run.
#[derive(Args, Debug, Clone)]
pub struct CvOptions {
    #[arg(long)]
    pub mil_epochs: Option<usize>,
    #[command(flatten)]
    pub gcn: GcnOptions,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    /// Stratified k-fold cross-validation of both stages from the stored
    /// patch features
    #[arg(long, value_name = "K")]
    pub cv: Option<usize>,
    #[command(flatten)]
    pub options: CvOptions,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum AxisArg {
    /// Number of graph modules
    AsgModules,
    /// Neighbours per node
    K,
    /// Top-S percentage
    S,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[command(flatten)]
    pub manifest: ManifestArgs,
    #[arg(long, value_enum)]
    pub axis: AxisArg,
    /// Comma-separated values, e.g. 10,30,60
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    #[arg(long, default_value_t = 5)]
    pub folds: usize,
    #[command(flatten)]
    pub options: CvOptions,
}
