//! Spatial K-nearest-neighbour graphs over selected patches.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mil::Bag;
use crate::tensor::{Real, Tensor};

/// Dense symmetric 0/1 adjacency with an empty diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    pub fn empty(n: usize) -> Self {
        Self {
            n,
            bits: vec![false; n * n],
        }
    }

    /// Builds an undirected graph; self-loops are rejected.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self> {
        let mut a = Self::empty(n);
        for &(i, j) in edges {
            if i >= n || j >= n || i == j {
                return Err(Error::InvalidArgument(format!(
                    "bad edge ({i}, {j}) for {n} nodes"
                )));
            }
            a.connect(i, j);
        }
        Ok(a)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn connect(&mut self, i: usize, j: usize) {
        self.bits[i * self.n + j] = true;
        self.bits[j * self.n + i] = true;
    }

    pub fn has(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.bits[i * self.n..(i + 1) * self.n]
            .iter()
            .filter(|&&b| b)
            .count()
    }

    /// Undirected edges with `src < dst`, sorted.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.has(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn is_symmetric(&self) -> bool {
        (0..self.n).all(|i| !self.has(i, i) && (0..i).all(|j| self.has(i, j) == self.has(j, i)))
    }

    /// Induced subgraph on `kept`, in the given order.
    pub fn subgraph(&self, kept: &[usize]) -> Self {
        let mut out = Self::empty(kept.len());
        for (a, &i) in kept.iter().enumerate() {
            for (b, &j) in kept.iter().enumerate() {
                out.bits[a * kept.len() + b] = self.has(i, j);
            }
        }
        out
    }

    /// Relabels node `i` as `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let mut out = Self::empty(self.n);
        for (i, j) in self.edges() {
            out.connect(perm[i], perm[j]);
        }
        out
    }

    /// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree matrix of `A + I`.
    pub fn normalized<T: Real>(&self) -> Tensor<T> {
        let n = self.n;
        let inv_sqrt: Vec<T> = (0..n)
            .map(|i| T::one() / T::lit((self.degree(i) + 1) as f64).sqrt())
            .collect();
        let mut t = Tensor::zeros(&[n, n]);
        let data = t.data_mut();
        for i in 0..n {
            for j in 0..n {
                if i == j || self.has(i, j) {
                    data[i * n + j] = inv_sqrt[i] * inv_sqrt[j];
                }
            }
        }
        t
    }
}

/// Graph handed to the stage-2 network.
#[derive(Clone, Debug, PartialEq)]
pub struct PatchGraph {
    pub slide_id: String,
    pub label: usize,
    /// `[n, F]`
    pub node_features: Tensor<f32>,
    pub adjacency: Adjacency,
    pub coords: Vec<[f64; 2]>,
    /// Source patch index of each node.
    pub patch_ids: Vec<usize>,
}

impl PatchGraph {
    pub fn len(&self) -> usize {
        self.adjacency.len()
    }

    pub fn is_empty(&self) -> bool {
        self.adjacency.is_empty()
    }
}

fn squared_distance(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)
}

/// Directed KNN by Euclidean distance (ties to the lower index),
/// symmetrised by union.
pub fn knn_adjacency(points: &[[f64; 2]], k: usize) -> Adjacency {
    let n = points.len();
    let mut adj = Adjacency::empty(n);
    let take = k.min(n.saturating_sub(1));
    let mut others: Vec<(f64, usize)> = Vec::with_capacity(n);
    for i in 0..n {
        others.clear();
        others.extend(
            (0..n)
                .filter(|&j| j != i)
                .map(|j| (squared_distance(points[i], points[j]), j)),
        );
        others.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        for &(_, j) in &others[..take] {
            adj.connect(i, j);
        }
    }
    adj
}

/// Builds the graph over `selected` patches of a bag, taking node features
/// from the rows of `features` (one row per bag patch).
pub fn build_graph(
    bag: &Bag,
    selected: &[usize],
    features: &Tensor<f32>,
    k: usize,
) -> Result<PatchGraph> {
    if selected.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no patches selected",
            bag.slide_id
        )));
    }
    if k == 0 {
        return Err(Error::InvalidArgument("K must be at least 1".into()));
    }
    if features.rows() != bag.len() {
        return Err(Error::shape(
            "build_graph",
            format!("{} feature rows for {} patches", features.rows(), bag.len()),
        ));
    }
    let coords: Vec<[f64; 2]> = selected
        .iter()
        .map(|&i| {
            bag.coords
                .get(i)
                .copied()
                .ok_or_else(|| Error::InvalidArgument(format!("patch {i} not in bag")))
        })
        .collect::<Result<_>>()?;
    Ok(PatchGraph {
        slide_id: bag.slide_id.clone(),
        label: bag.label,
        node_features: features.select_rows(selected)?,
        adjacency: knn_adjacency(&coords, k),
        coords,
        patch_ids: selected.to_vec(),
    })
}

/// One line of `graph.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub src: usize,
    pub dst: usize,
}

/// One line of `nodes.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeRecord {
    pub node: usize,
    pub patch_id: usize,
    pub center_x: f64,
    pub center_y: f64,
}

pub const GRAPH_FILE: &str = "graph.csv";
pub const NODES_FILE: &str = "nodes.csv";
pub const NODE_FEATURES_FILE: &str = "node_features.bin";

/// Writes `graph.csv`, `nodes.csv` and `node_features.bin` into `dir`.
pub fn write_graph(dir: impl AsRef<Path>, g: &PatchGraph) -> Result<()> {
    let dir = dir.as_ref();
    let edges: Vec<EdgeRecord> = g
        .adjacency
        .edges()
        .into_iter()
        .map(|(src, dst)| EdgeRecord { src, dst })
        .collect();
    crate::io::write_csv(dir.join(GRAPH_FILE), &edges)?;
    let nodes: Vec<NodeRecord> = g
        .patch_ids
        .iter()
        .zip(&g.coords)
        .enumerate()
        .map(|(node, (&patch_id, c))| NodeRecord {
            node,
            patch_id,
            center_x: c[0],
            center_y: c[1],
        })
        .collect();
    crate::io::write_csv(dir.join(NODES_FILE), &nodes)?;
    crate::io::write_features(dir.join(NODE_FEATURES_FILE), &g.node_features)
}

pub fn read_graph(dir: impl AsRef<Path>, slide_id: &str, label: usize) -> Result<PatchGraph> {
    let dir = dir.as_ref();
    let nodes: Vec<NodeRecord> = crate::io::read_csv(dir.join(NODES_FILE))?;
    let edges: Vec<EdgeRecord> = crate::io::read_csv(dir.join(GRAPH_FILE))?;
    let node_features = crate::io::read_features(dir.join(NODE_FEATURES_FILE))?;
    let n = nodes.len();
    if node_features.rows() != n || nodes.iter().enumerate().any(|(i, r)| r.node != i) {
        return Err(Error::format(
            dir,
            "nodes.csv does not match node_features.bin",
        ));
    }
    let pairs: Vec<(usize, usize)> = edges.iter().map(|e| (e.src, e.dst)).collect();
    let adjacency = Adjacency::from_edges(n, &pairs)
        .map_err(|e| Error::format(dir.join(GRAPH_FILE), e.to_string()))?;
    Ok(PatchGraph {
        slide_id: slide_id.to_string(),
        label,
        node_features,
        adjacency,
        coords: nodes.iter().map(|r| [r.center_x, r.center_y]).collect(),
        patch_ids: nodes.iter().map(|r| r.patch_id).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn collinear_example() {
        let pts: Vec<[f64; 2]> = [0.0, 1.0, 2.0, 3.0, 10.0]
            .iter()
            .map(|&x| [x, 0.0])
            .collect();
        let adj = knn_adjacency(&pts, 1);
        assert_eq!(adj.edges(), vec![(0, 1), (1, 2), (2, 3), (3, 4)]);
    }

    #[test]
    fn small_graphs_are_complete() {
        let pts: Vec<[f64; 2]> = (0..6).map(|i| [(i * i) as f64, i as f64]).collect();
        let adj = knn_adjacency(&pts, 5);
        assert_eq!(adj.edges().len(), 15);
        assert!(knn_adjacency(&pts[..1], 10).edges().is_empty());
    }

    #[test]
    fn ties_go_to_lower_index() {
        // node 1 is equidistant from 0 and 2
        let pts = [[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        let adj = knn_adjacency(&pts, 1);
        assert_eq!(adj.edges(), vec![(0, 1), (1, 2)]);
        assert!(adj.has(1, 0));
    }

    #[test]
    fn normalized_triangle() {
        let adj = Adjacency::from_edges(3, &[(0, 1), (1, 2), (0, 2)]).unwrap();
        let a = adj.normalized::<f64>();
        assert!(a.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let single = Adjacency::empty(1).normalized::<f64>();
        assert_eq!(single.data(), &[1.0]);
    }

    #[test]
    fn subgraph_keeps_induced_edges() {
        let adj = Adjacency::from_edges(4, &[(0, 1), (1, 2), (2, 3)]).unwrap();
        let sub = adj.subgraph(&[1, 2, 3]);
        assert_eq!(sub.edges(), vec![(0, 1), (1, 2)]);
        assert!(sub.is_symmetric());
    }

    #[test]
    fn rejects_self_loops_and_empty_selection() {
        assert!(Adjacency::from_edges(2, &[(1, 1)]).is_err());
        let bag = Bag::new("b", Tensor::zeros(&[2, 2]), vec![[0.0, 0.0], [1.0, 0.0]], 0).unwrap();
        assert!(build_graph(&bag, &[], &bag.features, 3).is_err());
    }

    #[test]
    fn files_round_trip() {
        let bag = Bag::new(
            "b",
            Tensor::from_f64(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap(),
            vec![[16.0, 16.0], [48.0, 16.0], [16.0, 48.0]],
            1,
        )
        .unwrap();
        let g = build_graph(&bag, &[0, 2], &bag.features, 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_graph(dir.path(), &g).unwrap();
        assert_eq!(read_graph(dir.path(), "b", 1).unwrap(), g);
        let csv = std::fs::read_to_string(dir.path().join(GRAPH_FILE)).unwrap();
        assert_eq!(csv, "src,dst\n0,1\n");
    }
}
