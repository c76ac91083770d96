//! Synthetic graphs with a controllable homophily level, plus node splits.
//!
//! Nodes draw classes uniformly; each edge is intra-class with the target
//! probability (otherwise cross-class) with endpoints picked uniformly within
//! the chosen pair type. Features are orthogonal class centers plus isotropic
//! Gaussian noise, so an attribute-only classifier has real signal to learn.

use rand::prelude::IndexedRandom;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::DenseMatrix;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    /// Desired fraction of intra-class edges, in [0, 1].
    pub target_homophily: f64,
    pub avg_degree: f64,
    pub feature_dim: usize,
    /// Scale of the orthogonal class centers.
    pub class_center_separation: f64,
    /// Standard deviation of the per-dimension feature noise.
    pub noise_scale: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.target_homophily) {
            return Err(Error::Infeasible(format!(
                "target homophily {} outside [0, 1]",
                self.target_homophily
            )));
        }
        if self.num_classes > self.num_nodes {
            return Err(Error::Infeasible(format!(
                "{} classes exceed {} nodes",
                self.num_classes, self.num_nodes
            )));
        }
        if self.avg_degree <= 0.0 {
            return Err(Error::Infeasible("average degree must be positive".into()));
        }
        let n = self.num_nodes as f64;
        if self.avg_degree * n / 2.0 > n * (n - 1.0) / 2.0 {
            return Err(Error::Infeasible(format!(
                "average degree {} infeasible for {} nodes",
                self.avg_degree, self.num_nodes
            )));
        }
        if self.feature_dim < self.num_classes {
            return Err(Error::Infeasible(format!(
                "feature dim {} too small for {} orthogonal class centers",
                self.feature_dim, self.num_classes
            )));
        }
        if self.noise_scale <= 0.0 {
            return Err(Error::Infeasible("noise scale must be positive".into()));
        }
        if self.class_center_separation < 0.0 {
            return Err(Error::Infeasible("separation must be nonnegative".into()));
        }
        Ok(())
    }
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Graph> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.num_nodes;
    let c = spec.num_classes;

    let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for (v, &y) in labels.iter().enumerate() {
        members[y].push(v);
    }

    let target_edges = (spec.avg_degree * n as f64 / 2.0).floor() as usize;
    let mut seen: HashSet<(usize, usize)> = HashSet::new();
    let mut edges: Vec<(usize, usize)> = Vec::with_capacity(target_edges);
    let max_attempts = 200 * target_edges + 10_000;
    let mut attempts = 0usize;

    // The edge type is drawn once per placed edge and held fixed while
    // collisions resample the endpoints; redrawing the type on rejection
    // would skew the accepted mix away from the target.
    while edges.len() < target_edges {
        let intra = rng.random::<f64>() < spec.target_homophily;
        loop {
            attempts += 1;
            if attempts > max_attempts {
                return Err(Error::Infeasible(format!(
                    "could not place {target_edges} edges at homophily {}",
                    spec.target_homophily
                )));
            }
            let u = rng.random_range(0..n);
            let v = if intra {
                let pool = &members[labels[u]];
                if pool.len() < 2 {
                    continue;
                }
                let v = *pool.choose(&mut rng).expect("nonempty");
                if v == u {
                    continue;
                }
                v
            } else {
                let v = rng.random_range(0..n);
                if labels[v] == labels[u] {
                    continue;
                }
                v
            };
            let key = (u.min(v), u.max(v));
            if seen.insert(key) {
                edges.push(key);
                break;
            }
        }
    }

    let noise = Normal::new(0.0, spec.noise_scale).expect("validated scale");
    let mut feature_values = Vec::with_capacity(n * spec.feature_dim);
    for &y in &labels {
        for dim in 0..spec.feature_dim {
            let center = if dim == y {
                spec.class_center_separation
            } else {
                0.0
            };
            feature_values.push(center + noise.sample(&mut rng));
        }
    }
    let features = DenseMatrix::new(n, spec.feature_dim, feature_values)?;

    let labels = labels.into_iter().map(Some).collect();
    let (graph, _) = Graph::build(
        n,
        c,
        &edges,
        features,
        labels,
        vec![false; n],
        vec![false; n],
        vec![false; n],
    )?;
    Ok(graph)
}

/// Stratified split: exactly `train_per_class` train nodes per class, then
/// `val_count` validation nodes from the remaining labeled pool; every other
/// labeled node lands in test.
pub fn split_nodes(
    graph: &Graph,
    train_per_class: usize,
    val_count: usize,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.num_nodes();
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for v in 0..n {
        if let Some(y) = graph.label(v) {
            by_class[y].push(v);
        }
    }

    let mut pool: Vec<usize> = Vec::new();
    for (class, nodes) in by_class.iter_mut().enumerate() {
        if nodes.len() < train_per_class {
            return Err(Error::InsufficientClassNodes {
                class,
                available: nodes.len(),
                needed: train_per_class,
            });
        }
        nodes.shuffle(&mut rng);
        for &v in nodes.iter().take(train_per_class) {
            train[v] = true;
        }
        pool.extend(nodes.iter().skip(train_per_class));
    }

    pool.sort_unstable();
    pool.shuffle(&mut rng);
    if pool.len() < val_count {
        return Err(Error::Infeasible(format!(
            "validation needs {val_count} nodes but only {} remain",
            pool.len()
        )));
    }
    for &v in pool.iter().take(val_count) {
        val[v] = true;
    }
    for &v in pool.iter().skip(val_count) {
        test[v] = true;
    }
    Ok((train, val, test))
}

/// Per-class fractional split (used for graphs whose files carry no masks).
pub fn split_nodes_fraction(
    graph: &Graph,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Vec<bool>, Vec<bool>, Vec<bool>)> {
    if !(0.0..1.0).contains(&train_frac)
        || !(0.0..1.0).contains(&val_frac)
        || train_frac + val_frac >= 1.0
        || train_frac <= 0.0
        || val_frac <= 0.0
    {
        return Err(Error::Config(format!(
            "invalid split fractions {train_frac}/{val_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = graph.num_nodes();
    let mut train = vec![false; n];
    let mut val = vec![false; n];
    let mut test = vec![false; n];

    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); graph.num_classes()];
    for v in 0..n {
        if let Some(y) = graph.label(v) {
            by_class[y].push(v);
        }
    }
    for nodes in by_class.iter_mut() {
        if nodes.is_empty() {
            continue;
        }
        nodes.shuffle(&mut rng);
        let n_train = ((nodes.len() as f64 * train_frac).round() as usize)
            .max(1)
            .min(nodes.len());
        let n_val = ((nodes.len() as f64 * val_frac).round() as usize)
            .max(1)
            .min(nodes.len() - n_train);
        for (i, &v) in nodes.iter().enumerate() {
            if i < n_train {
                train[v] = true;
            } else if i < n_train + n_val {
                val[v] = true;
            } else {
                test[v] = true;
            }
        }
    }
    Ok((train, val, test))
}
