//! Attribute-only pseudo-label predictor: a one-hidden-layer MLP trained on
//! the labeled nodes, plus assembly of the full label assignment used by
//! label-wise aggregation.
//!
//! The predictor is deliberately graph-free: on low-homophily graphs a
//! message-passing predictor would produce worse label estimates than the
//! raw attributes do.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::numerics::{
    dense_matmul, dense_matmul_nt, dense_matmul_tn, masked_cross_entropy, relu, relu_backward,
    row_argmax, row_softmax, row_softmax_backward, DenseMatrix, Optimizer, ParameterStore,
};
use crate::trainer::accuracy;

/// Where a node's assigned label came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelSource {
    GroundTruth,
    Predicted,
}

/// One class id per node, flagged ground-truth vs predicted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelAssignment {
    class_ids: Vec<usize>,
    sources: Vec<LabelSource>,
}

impl LabelAssignment {
    pub fn class_ids(&self) -> &[usize] {
        &self.class_ids
    }

    pub fn class_of(&self, v: usize) -> usize {
        self.class_ids[v]
    }

    pub fn source_of(&self, v: usize) -> LabelSource {
        self.sources[v]
    }

    pub fn len(&self) -> usize {
        self.class_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_ids.is_empty()
    }

    /// Test-only constructor for handmade assignments.
    pub fn from_parts(class_ids: Vec<usize>, sources: Vec<LabelSource>) -> Self {
        assert_eq!(class_ids.len(), sources.len());
        Self { class_ids, sources }
    }
}

/// Which ground-truth labels the assignment preserves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PseudoScope {
    /// All provided labels (train and validation nodes).
    #[default]
    TrainAndVal,
    /// Train labels only, for leakage-sensitive studies.
    TrainOnly,
}

/// One-hidden-layer MLP over node attributes.
#[derive(Debug, Clone)]
pub struct MlpPredictor {
    pub store: ParameterStore,
    hidden: usize,
}

pub struct MlpCache {
    hidden_pre: DenseMatrix,
    hidden: DenseMatrix,
    probs: DenseMatrix,
}

impl MlpPredictor {
    pub fn new(feature_dim: usize, num_classes: usize, hidden: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        store.insert_glorot("w1", feature_dim, hidden, &mut rng);
        store.insert_zeros("b1", 1, hidden);
        store.insert_glorot("w2", hidden, num_classes, &mut rng);
        store.insert_zeros("b2", 1, num_classes);
        Self { store, hidden }
    }

    pub fn hidden_width(&self) -> usize {
        self.hidden
    }

    /// softmax(relu(X·W1 + b1)·W2 + b2), row per node.
    pub fn forward(&self, features: &DenseMatrix) -> Result<DenseMatrix> {
        Ok(self.forward_cached(features)?.0)
    }

    pub fn forward_cached(&self, features: &DenseMatrix) -> Result<(DenseMatrix, MlpCache)> {
        let mut hidden_pre = dense_matmul(features, self.store.value("w1"))?;
        hidden_pre.add_row_broadcast(self.store.value("b1"))?;
        let hidden = relu(&hidden_pre);
        let mut logits = dense_matmul(&hidden, self.store.value("w2"))?;
        logits.add_row_broadcast(self.store.value("b2"))?;
        let probs = row_softmax(&logits);
        let cache = MlpCache {
            hidden_pre,
            hidden,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    /// Accumulate gradients for all four parameters given the loss gradient
    /// at the probability output.
    pub fn backward(
        &mut self,
        features: &DenseMatrix,
        cache: &MlpCache,
        grad_probs: &DenseMatrix,
    ) -> Result<()> {
        let g_logits = row_softmax_backward(grad_probs, &cache.probs)?;
        self.store
            .add_gradient("w2", &dense_matmul_tn(&cache.hidden, &g_logits)?)?;
        self.store.add_gradient("b2", &g_logits.column_sums())?;
        let g_hidden = dense_matmul_nt(&g_logits, self.store.value("w2"))?;
        let g_hidden_pre = relu_backward(&g_hidden, &cache.hidden_pre)?;
        self.store
            .add_gradient("w1", &dense_matmul_tn(features, &g_hidden_pre)?)?;
        self.store.add_gradient("b1", &g_hidden_pre.column_sums())?;
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PseudoTrainConfig {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub hidden: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for PseudoTrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 500,
            patience: 50,
            lr: 0.01,
            hidden: 64,
            optimizer: Optimizer::Adam,
            seed: 0,
        }
    }
}

/// Full-batch training on the train mask, returning the parameters with the
/// best validation accuracy seen (falls back to train accuracy when the
/// validation mask is empty).
pub fn train_pseudo_predictor(graph: &Graph, config: &PseudoTrainConfig) -> Result<MlpPredictor> {
    if graph.train_mask().iter().all(|m| !m) {
        return Err(Error::EmptyMask("pseudo-label training"));
    }
    let labels: Vec<usize> = graph.labels().iter().map(|l| l.unwrap_or(0)).collect();
    let has_val = graph.val_mask().iter().any(|m| *m);
    let select_mask: &[bool] = if has_val {
        graph.val_mask()
    } else {
        graph.train_mask()
    };

    let mut model = MlpPredictor::new(
        graph.feature_dim(),
        graph.num_classes(),
        config.hidden,
        config.seed,
    );
    let mut best = model.clone();
    let mut best_acc = f64::NEG_INFINITY;
    let mut since_improvement = 0usize;

    for _ in 0..config.max_epochs {
        let (probs, cache) = model.forward_cached(graph.features())?;
        let (loss, grad) = masked_cross_entropy(&probs, &labels, graph.train_mask())?;
        if !loss.is_finite() {
            return Err(Error::NonFinite("pseudo-label training loss".into()));
        }
        let acc = accuracy(&probs, graph.labels(), select_mask)?;
        if acc >= best_acc {
            if acc > best_acc {
                since_improvement = 0;
            }
            best_acc = acc;
            best = model.clone();
        }
        model.backward(graph.features(), &cache, &grad)?;
        model.store.step(config.optimizer, config.lr);

        since_improvement += 1;
        if since_improvement > config.patience {
            break;
        }
    }
    Ok(best)
}

/// Nodes with given labels keep them; every other node takes the argmax of
/// its probability row (ties to the lowest class id).
pub fn assign_labels(
    graph: &Graph,
    probs: &DenseMatrix,
    scope: PseudoScope,
) -> Result<LabelAssignment> {
    if probs.rows() != graph.num_nodes() || probs.cols() != graph.num_classes() {
        return Err(Error::Consistency(format!(
            "probability matrix {}x{} does not match graph ({} nodes, {} classes)",
            probs.rows(),
            probs.cols(),
            graph.num_nodes(),
            graph.num_classes()
        )));
    }
    let predicted = row_argmax(probs);
    let mut class_ids = Vec::with_capacity(graph.num_nodes());
    let mut sources = Vec::with_capacity(graph.num_nodes());
    for v in 0..graph.num_nodes() {
        let keep_truth = match scope {
            PseudoScope::TrainAndVal => graph.train_mask()[v] || graph.val_mask()[v],
            PseudoScope::TrainOnly => graph.train_mask()[v],
        };
        if keep_truth {
            let y = graph.label(v).ok_or_else(|| {
                Error::Consistency(format!("node {v} has a mask but no label"))
            })?;
            class_ids.push(y);
            sources.push(LabelSource::GroundTruth);
        } else {
            class_ids.push(predicted[v]);
            sources.push(LabelSource::Predicted);
        }
    }
    Ok(LabelAssignment { class_ids, sources })
}
