//! Undirected attributed graphs, normalization, and edge homophily.

use std::path::Path;

use ndarray::Array2;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::sparse::SparseMatrix;

/// An undirected graph with a symmetric unit-weight adjacency, a dense
/// `N × d_i` attribute matrix and optional integer labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    adjacency: SparseMatrix,
    features: Array2<f64>,
    labels: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LoadOptions {
    /// Keep `i\ti` lines as self-loops instead of dropping them.
    pub keep_self_loops: bool,
}

impl Graph {
    pub fn new(
        adjacency: SparseMatrix,
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
    ) -> Result<Self> {
        if !adjacency.is_square() {
            return Err(Error::shape("adjacency must be square"));
        }
        if !adjacency.is_symmetric(0.0) {
            return Err(Error::Domain("adjacency must be symmetric".into()));
        }
        if adjacency.values().iter().any(|&v| v < 0.0) {
            return Err(Error::Domain("edge weights must be nonnegative".into()));
        }
        let n = adjacency.n_rows();
        if features.nrows() != n {
            return Err(Error::shape(format!(
                "{} feature rows for {n} nodes",
                features.nrows()
            )));
        }
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::shape(format!("{} labels for {n} nodes", l.len())));
            }
        }
        Ok(Graph {
            adjacency,
            features,
            labels,
        })
    }

    /// Builds a unit-weight graph from an edge list. Edges are symmetrized and
    /// duplicates collapse; self-loops are dropped unless `keep_self_loops`.
    pub fn from_edges(
        n_nodes: usize,
        edges: &[(usize, usize)],
        features: Array2<f64>,
        labels: Option<Vec<usize>>,
        options: LoadOptions,
    ) -> Result<Self> {
        let mut triplets = Vec::with_capacity(edges.len() * 2);
        for &(a, b) in edges {
            if a >= n_nodes || b >= n_nodes {
                return Err(Error::Index(format!(
                    "edge ({a}, {b}) references a node outside 0..{n_nodes}"
                )));
            }
            if a == b && !options.keep_self_loops {
                continue;
            }
            triplets.push((a, b, 1.0));
            triplets.push((b, a, 1.0));
        }
        triplets.sort_by_key(|x| (x.0, x.1));
        triplets.dedup_by(|x, y| x.0 == y.0 && x.1 == y.1);
        let adjacency = SparseMatrix::from_triplets(n_nodes, n_nodes, triplets)?;
        Graph::new(adjacency, features, labels)
    }

    pub fn n_nodes(&self) -> usize {
        self.adjacency.n_rows()
    }

    pub fn adjacency(&self) -> &SparseMatrix {
        &self.adjacency
    }

    pub fn features(&self) -> &Array2<f64> {
        &self.features
    }

    pub fn labels(&self) -> Option<&[usize]> {
        self.labels.as_deref()
    }

    pub fn n_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().max())
            .map_or(0, |m| m + 1)
    }

    /// Undirected edges `(i, j)` with `i <= j`, in row-major order.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.adjacency
            .iter()
            .filter(|&(r, c, _)| r <= c)
            .map(|(r, c, _)| (r, c))
            .collect()
    }

    pub fn n_edges(&self) -> usize {
        self.adjacency.iter().filter(|&(r, c, _)| r <= c).count()
    }

    pub fn degrees(&self) -> Vec<f64> {
        (0..self.n_nodes())
            .map(|r| self.adjacency.row(r).map(|(_, v)| v).sum())
            .collect()
    }

    pub fn with_features(self, features: Array2<f64>) -> Result<Self> {
        Graph::new(self.adjacency, features, self.labels)
    }

    pub fn with_labels(self, labels: Option<Vec<usize>>) -> Result<Self> {
        Graph::new(self.adjacency, self.features, labels)
    }
}

/// Reads a graph from the `edges.tsv` / `features.tsv` / `labels.tsv` triple.
/// The node count is the number of feature rows.
pub fn load_graph(edges_path: &Path, features_path: &Path, labels_path: Option<&Path>) -> Result<Graph> {
    load_graph_with(edges_path, features_path, labels_path, LoadOptions::default())
}

pub fn load_graph_with(
    edges_path: &Path,
    features_path: &Path,
    labels_path: Option<&Path>,
    options: LoadOptions,
) -> Result<Graph> {
    let features = io::read_dense(features_path)?;
    let n = features.nrows();
    let edges = io::read_edges(edges_path)?;
    let labels = labels_path.map(io::read_labels).transpose()?;
    if let Some(l) = &labels {
        if l.len() != n {
            return Err(Error::shape(format!(
                "{} has {} labels but {} has {n} feature rows",
                labels_path.unwrap().display(),
                l.len(),
                features_path.display()
            )));
        }
    }
    Graph::from_edges(n, &edges, features, labels, options)
}

/// Column normalization `A D⁻¹`: every column is divided by its sum.
/// A zero column (isolated node) becomes the unit coordinate column, so the
/// result is column-stochastic for every input.
pub fn column_normalize(s: &SparseMatrix) -> Result<SparseMatrix> {
    if !s.is_square() {
        return Err(Error::shape("column normalization needs a square matrix"));
    }
    if let Some(v) = s.values().iter().find(|&&v| v < 0.0) {
        return Err(Error::Domain(format!(
            "column normalization is defined for nonnegative matrices, found {v}"
        )));
    }
    let sums = s.column_sums();
    let factors: Vec<f64> = sums
        .iter()
        .map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 })
        .collect();
    let scaled = s.scale_columns(&factors)?;
    let isolated: Vec<usize> = (0..sums.len()).filter(|&c| sums[c] == 0.0).collect();
    if isolated.is_empty() {
        return Ok(scaled);
    }
    let patch = SparseMatrix::from_triplets(
        s.n_rows(),
        s.n_cols(),
        isolated.into_iter().map(|c| (c, c, 1.0)),
    )?;
    scaled.linear_combination(1.0, &patch, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HomophilyScore {
    pub value: f64,
    pub n_edges_counted: usize,
}

/// Edge homophily: the fraction of undirected edges whose endpoints share a label.
pub fn homophily(g: &Graph) -> Result<HomophilyScore> {
    let labels = g
        .labels()
        .ok_or_else(|| Error::contract("homophily needs node labels"))?;
    let edges = g.edges();
    if edges.is_empty() {
        return Err(Error::contract("homophily is undefined for a graph without edges"));
    }
    let same = edges.iter().filter(|&&(a, b)| labels[a] == labels[b]).count();
    Ok(HomophilyScore {
        value: same as f64 / edges.len() as f64,
        n_edges_counted: edges.len(),
    })
}
