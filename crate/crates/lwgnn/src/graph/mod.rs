//! Graph representation, homophily measurement, adjacency normalization,
//! file I/O, node splits, and synthetic graph generation.

pub mod io;
pub mod synthetic;

pub use io::{load_graph, save_graph};
pub use synthetic::{generate_synthetic, split_nodes, split_nodes_fraction, SyntheticSpec};

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, SparseMatrix};

/// Immutable undirected graph: CSR adjacency without self-loops, dense node
/// features, optional labels, and disjoint train/val/test masks.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    num_nodes: usize,
    num_classes: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    features: DenseMatrix,
    labels: Vec<Option<usize>>,
    train_mask: Vec<bool>,
    val_mask: Vec<bool>,
    test_mask: Vec<bool>,
}

/// Counts of input irregularities dropped while building adjacency.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EdgeStats {
    pub self_loops_dropped: usize,
    pub duplicates_dropped: usize,
}

impl Graph {
    /// Build a graph from an undirected edge list. Self-loops are dropped and
    /// duplicate edges (either orientation) are stored once per direction;
    /// both are counted in the returned stats.
    pub fn build(
        num_nodes: usize,
        num_classes: usize,
        edges: &[(usize, usize)],
        features: DenseMatrix,
        labels: Vec<Option<usize>>,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<(Self, EdgeStats)> {
        if num_nodes == 0 {
            return Err(Error::Consistency("graph needs at least one node".into()));
        }
        if num_classes == 0 {
            return Err(Error::Consistency("graph needs at least one class".into()));
        }
        if features.rows() != num_nodes {
            return Err(Error::Consistency(format!(
                "feature matrix has {} rows for {num_nodes} nodes",
                features.rows()
            )));
        }
        if !features.is_finite() {
            return Err(Error::Consistency("non-finite feature entries".into()));
        }
        if labels.len() != num_nodes {
            return Err(Error::Consistency(format!(
                "{} label entries for {num_nodes} nodes",
                labels.len()
            )));
        }
        for (v, label) in labels.iter().enumerate() {
            if let Some(y) = label {
                if *y >= num_classes {
                    return Err(Error::Consistency(format!(
                        "node {v} has label {y} but only {num_classes} classes"
                    )));
                }
            }
        }
        for mask in [&train_mask, &val_mask, &test_mask] {
            if mask.len() != num_nodes {
                return Err(Error::Consistency("mask length differs from node count".into()));
            }
        }
        for v in 0..num_nodes {
            let overlap = (train_mask[v] as u8) + (val_mask[v] as u8) + (test_mask[v] as u8);
            if overlap > 1 {
                return Err(Error::Consistency(format!("node {v} is in multiple masks")));
            }
            if (train_mask[v] || val_mask[v]) && labels[v].is_none() {
                return Err(Error::Consistency(format!(
                    "node {v} is in train/val mask but unlabeled"
                )));
            }
        }

        let mut stats = EdgeStats::default();
        let mut adjacency: Vec<Vec<usize>> = vec![Vec::new(); num_nodes];
        let mut seen = std::collections::HashSet::new();
        for &(a, b) in edges {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Consistency(format!(
                    "edge ({a}, {b}) out of range for {num_nodes} nodes"
                )));
            }
            if a == b {
                stats.self_loops_dropped += 1;
                continue;
            }
            let key = (a.min(b), a.max(b));
            if !seen.insert(key) {
                stats.duplicates_dropped += 1;
                continue;
            }
            adjacency[a].push(b);
            adjacency[b].push(a);
        }

        let mut row_offsets = Vec::with_capacity(num_nodes + 1);
        let mut col_indices = Vec::with_capacity(2 * seen.len());
        row_offsets.push(0);
        for neighbors in adjacency.iter_mut() {
            neighbors.sort_unstable();
            col_indices.extend_from_slice(neighbors);
            row_offsets.push(col_indices.len());
        }

        Ok((
            Self {
                num_nodes,
                num_classes,
                row_offsets,
                col_indices,
                features,
                labels,
                train_mask,
                val_mask,
                test_mask,
            },
            stats,
        ))
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &DenseMatrix {
        &self.features
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, v: usize) -> Option<usize> {
        self.labels[v]
    }

    pub fn train_mask(&self) -> &[bool] {
        &self.train_mask
    }

    pub fn val_mask(&self) -> &[bool] {
        &self.val_mask
    }

    pub fn test_mask(&self) -> &[bool] {
        &self.test_mask
    }

    pub fn neighbors(&self, v: usize) -> &[usize] {
        &self.col_indices[self.row_offsets[v]..self.row_offsets[v + 1]]
    }

    pub fn degree(&self, v: usize) -> usize {
        self.row_offsets[v + 1] - self.row_offsets[v]
    }

    /// Number of undirected edges.
    pub fn num_edges(&self) -> usize {
        self.col_indices.len() / 2
    }

    /// Each undirected edge once, as (low, high) pairs.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.num_nodes).flat_map(move |v| {
            self.neighbors(v)
                .iter()
                .filter(move |&&u| v < u)
                .map(move |&u| (v, u))
        })
    }

    /// Replace the split masks, reapplying the mask invariants.
    pub fn with_masks(
        &self,
        train_mask: Vec<bool>,
        val_mask: Vec<bool>,
        test_mask: Vec<bool>,
    ) -> Result<Self> {
        let mut g = self.clone();
        for mask in [&train_mask, &val_mask, &test_mask] {
            if mask.len() != self.num_nodes {
                return Err(Error::Consistency("mask length differs from node count".into()));
            }
        }
        for v in 0..self.num_nodes {
            let overlap = (train_mask[v] as u8) + (val_mask[v] as u8) + (test_mask[v] as u8);
            if overlap > 1 {
                return Err(Error::Consistency(format!("node {v} is in multiple masks")));
            }
            if (train_mask[v] || val_mask[v]) && self.labels[v].is_none() {
                return Err(Error::Consistency(format!(
                    "node {v} is in train/val mask but unlabeled"
                )));
            }
        }
        g.train_mask = train_mask;
        g.val_mask = val_mask;
        g.test_mask = test_mask;
        Ok(g)
    }

    /// Replace the labels (used by tests probing label sensitivity).
    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        let (g, _) = Graph::build(
            self.num_nodes,
            self.num_classes,
            &self.edges().collect::<Vec<_>>(),
            self.features.clone(),
            labels,
            self.train_mask.clone(),
            self.val_mask.clone(),
            self.test_mask.clone(),
        )?;
        Ok(g)
    }

    /// Labeled mask: train ∪ val (the nodes whose labels are given).
    pub fn given_label_mask(&self) -> Vec<bool> {
        (0..self.num_nodes)
            .map(|v| self.train_mask[v] || self.val_mask[v])
            .collect()
    }
}

/// Fraction of undirected edges whose endpoints share a class.
pub fn homophily_ratio(graph: &Graph, labels: &[usize]) -> Result<f64> {
    if labels.len() != graph.num_nodes() {
        return Err(Error::Consistency(format!(
            "{} labels for {} nodes",
            labels.len(),
            graph.num_nodes()
        )));
    }
    let mut total = 0usize;
    let mut intra = 0usize;
    for (v, u) in graph.edges() {
        total += 1;
        if labels[v] == labels[u] {
            intra += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyEdgeSet);
    }
    Ok(intra as f64 / total as f64)
}

/// Homophily of the graph's own (full) labeling.
pub fn graph_homophily(graph: &Graph) -> Result<f64> {
    let labels: Option<Vec<usize>> = graph.labels().iter().copied().collect();
    let labels = labels.ok_or(Error::Consistency(
        "homophily ratio needs every node labeled".into(),
    ))?;
    homophily_ratio(graph, &labels)
}

/// Symmetric normalization with self-loops: entry (v,u) is
/// 1/sqrt((deg(v)+1)(deg(u)+1)), diagonal included.
pub fn normalized_adjacency(graph: &Graph) -> SparseMatrix {
    let n = graph.num_nodes();
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|v| 1.0 / ((graph.degree(v) + 1) as f64).sqrt())
        .collect();
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
    for v in 0..n {
        let mut row = Vec::with_capacity(graph.degree(v) + 1);
        let mut diag_placed = false;
        for &u in graph.neighbors(v) {
            if !diag_placed && u > v {
                row.push((v, inv_sqrt[v] * inv_sqrt[v]));
                diag_placed = true;
            }
            row.push((u, inv_sqrt[v] * inv_sqrt[u]));
        }
        if !diag_placed {
            row.push((v, inv_sqrt[v] * inv_sqrt[v]));
        }
        rows.push(row);
    }
    SparseMatrix::from_rows(n, n, &rows).expect("rows are sorted by construction")
}
