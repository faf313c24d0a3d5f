//! Weakly-supervised slide classification.
//!
//! The pipeline tiles each slide into patches, encodes patches with a small
//! convolutional autoencoder, scores patches with gated attention pooling,
//! keeps the top-scoring fraction, links them into a spatial K-nearest
//! neighbour graph and classifies the graph with a stack of GCN +
//! self-attention pooling modules.
//!
//! Every numerical piece runs on the [`tensor`] autodiff engine and can be
//! gradient-checked in `f64`.

pub mod asg;
pub mod autoencoder;
pub mod checkpoint;
pub mod error;
pub mod graph;
pub mod heatmap;
pub mod io;
pub mod metrics;
pub mod mil;
pub mod optim;
pub mod par;
pub mod pipeline;
pub mod raster;
pub mod synth;
pub mod tensor;
pub mod tiling;
pub mod train;

pub use error::{Error, Result};
pub use par::Exec;
pub use tensor::{Real, Tape, Tensor, Var};
