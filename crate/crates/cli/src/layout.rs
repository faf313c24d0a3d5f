//! Where each artifact lives under the output directory.

use std::path::{Path, PathBuf};

use milg_core::graph::{GRAPH_FILE, NODES_FILE};

#[derive(Clone, Debug)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn manifest(&self) -> PathBuf {
        self.root.join("manifest.csv")
    }

    pub fn synth_spec(&self) -> PathBuf {
        self.root.join("synth.json")
    }

    pub fn truth(&self, slide: &str) -> PathBuf {
        self.root.join("truth").join(format!("{slide}.csv"))
    }

    pub fn slide_dir(&self, slide: &str) -> PathBuf {
        self.root.join("slides").join(slide)
    }

    pub fn coords(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join("coords.csv")
    }

    pub fn features(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join("features.bin")
    }

    pub fn scores(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join("scores.csv")
    }

    pub fn projected(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join("projected.bin")
    }

    pub fn graph(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join(GRAPH_FILE)
    }

    pub fn nodes(&self, slide: &str) -> PathBuf {
        self.slide_dir(slide).join(NODES_FILE)
    }

    pub fn model(&self, name: &str) -> PathBuf {
        self.root.join("models").join(format!("{name}.ckpt"))
    }

    pub fn train_log(&self, name: &str) -> PathBuf {
        self.root.join("logs").join(format!("{name}.csv"))
    }

    pub fn report(&self, file: &str) -> PathBuf {
        self.root.join("reports").join(file)
    }

    pub fn heatmap(&self, slide: &str, kind: &str) -> PathBuf {
        self.root
            .join("heatmaps")
            .join(format!("{slide}_{kind}.png"))
    }
}
