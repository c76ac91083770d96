//! Combined prediction, alternating bi-level training of the two branches
//! and the selection weights, evaluation, ablation variants, and the depth
//! study.
//!
//! The outer level adjusts the selection weights against validation loss
//! with the branch parameters treated as constants; the inner level then
//! takes `T` joint gradient steps on the branch parameters against training
//! loss with the selection weights fixed. Both levels see the cross entropy
//! of the *combined* probabilities, so gradient flows into each branch are
//! scaled by its current mixture weight.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::time::Instant;

use crate::error::{Error, Result};
use crate::gcn::Gcn;
use crate::graph::{normalized_adjacency, Graph};
use crate::labelwise::{build_class_adjacency, ClassAdjacency, EmptyClassFallback, LwGnn};
use crate::numerics::{
    masked_cross_entropy, row_argmax, row_softmax_backward, DenseMatrix, Optimizer,
    ParameterStore, SparseMatrix,
};
use crate::pseudo::{
    assign_labels, train_pseudo_predictor, LabelAssignment, MlpPredictor, PseudoScope,
    PseudoTrainConfig,
};

/// The pair of learnable model-selection weights; their softmax is the
/// mixture applied to the two branch predictions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub phi1: f64,
    pub phi2: f64,
}

impl Default for SelectionWeights {
    fn default() -> Self {
        Self {
            phi1: 0.0,
            phi2: 0.0,
        }
    }
}

impl SelectionWeights {
    /// softmax(phi1, phi2); the first component weights the label-wise branch.
    pub fn mixture(&self) -> (f64, f64) {
        let m = self.phi1.max(self.phi2);
        let e1 = (self.phi1 - m).exp();
        let e2 = (self.phi2 - m).exp();
        let sum = e1 + e2;
        (e1 / sum, e2 / sum)
    }
}

/// w1 * y_c + w2 * y_g with (w1, w2) = softmax(phi).
pub fn combine_predictions(
    y_c: &DenseMatrix,
    y_g: &DenseMatrix,
    weights: &SelectionWeights,
) -> Result<DenseMatrix> {
    if y_c.rows() != y_g.rows() || y_c.cols() != y_g.cols() {
        return Err(Error::Shape {
            op: "combine_predictions",
            left_rows: y_c.rows(),
            left_cols: y_c.cols(),
            right_rows: y_g.rows(),
            right_cols: y_g.cols(),
        });
    }
    let (w1, w2) = weights.mixture();
    let mut out = DenseMatrix::zeros(y_c.rows(), y_c.cols());
    out.add_scaled(y_c, w1)?;
    out.add_scaled(y_g, w2)?;
    Ok(out)
}

/// Fraction of masked nodes whose argmax prediction equals the true label.
pub fn accuracy(probs: &DenseMatrix, labels: &[Option<usize>], mask: &[bool]) -> Result<f64> {
    if labels.len() != probs.rows() || mask.len() != probs.rows() {
        return Err(Error::Consistency(
            "accuracy inputs disagree on node count".into(),
        ));
    }
    let predictions = row_argmax(probs);
    let mut total = 0usize;
    let mut correct = 0usize;
    for v in 0..probs.rows() {
        if !mask[v] {
            continue;
        }
        let y = labels[v].ok_or_else(|| {
            Error::Consistency(format!("node {v} in evaluation mask has no label"))
        })?;
        total += 1;
        if predictions[v] == y {
            correct += 1;
        }
    }
    if total == 0 {
        return Err(Error::EmptyMask("accuracy"));
    }
    Ok(correct as f64 / total as f64)
}

/// Which model combination an ablation run trains.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Both branches with learned selection weights.
    Full,
    /// Label-wise branch only, no selector.
    LabelwiseOnly,
    /// Homophilic GCN branch only.
    GcnOnly,
    /// Attribute MLP only.
    MlpOnly,
    /// Full model but with pseudo labels produced by a GCN instead of the MLP.
    GcnPseudoLabels,
}

impl Variant {
    pub fn as_str(&self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::LabelwiseOnly => "fc-only",
            Variant::GcnOnly => "fg-only",
            Variant::MlpOnly => "mlp-only",
            Variant::GcnPseudoLabels => "gcn-pseudo-labels",
        }
    }
}

/// Pseudo-label predictor actually used by a run.
#[derive(Debug, Clone)]
pub enum PseudoModel {
    Mlp(MlpPredictor),
    Gcn(Gcn),
}

impl PseudoModel {
    fn probabilities(&self, graph: &Graph, a_hat: &SparseMatrix) -> Result<DenseMatrix> {
        match self {
            PseudoModel::Mlp(m) => m.forward(graph.features()),
            PseudoModel::Gcn(m) => Ok(m.forward(a_hat, graph.features(), None)?.0),
        }
    }
}

/// Trained models of one run, shaped by the variant.
#[derive(Debug, Clone)]
pub enum Models {
    Combined {
        pseudo: PseudoModel,
        assignment: LabelAssignment,
        class_adj: ClassAdjacency,
        labelwise: LwGnn,
        gcn: Gcn,
        a_hat: SparseMatrix,
    },
    LabelwiseOnly {
        pseudo: PseudoModel,
        assignment: LabelAssignment,
        class_adj: ClassAdjacency,
        model: LwGnn,
    },
    GcnOnly {
        model: Gcn,
        a_hat: SparseMatrix,
    },
    MlpOnly {
        model: MlpPredictor,
    },
}

impl Models {
    /// Evaluation-mode probabilities of the variant's main predictor.
    pub fn probabilities(&self, graph: &Graph, weights: &SelectionWeights) -> Result<DenseMatrix> {
        match self {
            Models::Combined {
                class_adj,
                labelwise,
                gcn,
                a_hat,
                ..
            } => {
                let (y_c, _) = labelwise.forward(graph.features(), class_adj, None)?;
                let (y_g, _) = gcn.forward(a_hat, graph.features(), None)?;
                combine_predictions(&y_c, &y_g, weights)
            }
            Models::LabelwiseOnly {
                class_adj, model, ..
            } => Ok(model.forward(graph.features(), class_adj, None)?.0),
            Models::GcnOnly { model, a_hat } => {
                Ok(model.forward(a_hat, graph.features(), None)?.0)
            }
            Models::MlpOnly { model } => model.forward(graph.features()),
        }
    }
}

/// Accuracy of the variant's combined prediction over a mask.
pub fn evaluate(
    models: &Models,
    weights: &SelectionWeights,
    graph: &Graph,
    mask: &[bool],
) -> Result<f64> {
    let probs = models.probabilities(graph, weights)?;
    accuracy(&probs, graph.labels(), mask)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Learning rate for the label-wise branch parameters.
    pub lr_c: f64,
    /// Learning rate for the homophilic branch parameters.
    pub lr_g: f64,
    /// Learning rate for the selection weights.
    pub lr_phi: f64,
    /// Inner parameter steps per outer iteration.
    pub inner_steps: usize,
    pub max_outer: usize,
    /// Outer iterations without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    /// Label-wise message passing depth.
    pub layers: usize,
    /// Hidden width (label-wise projection, GCN hidden, MLP hidden).
    pub hidden: usize,
    /// GCN branch depth.
    pub gcn_layers: usize,
    pub optimizer: Optimizer,
    pub fallback: EmptyClassFallback,
    pub pseudo_scope: PseudoScope,
    /// Input dropout of the homophilic branch.
    pub dropout: f64,
    /// Input dropout of the label-wise branch (off by default; the branch is
    /// defined without regularization).
    pub dropout_c: f64,
    /// L2 decay applied to the GCN's first-layer weights.
    pub weight_decay: f64,
    /// L2 decay applied to every label-wise parameter. Keeps the branch's
    /// probabilities calibrated, which the probability-level mixture needs.
    pub weight_decay_c: f64,
    pub pseudo_max_epochs: usize,
    pub pseudo_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_c: 0.01,
            lr_g: 0.01,
            lr_phi: 0.01,
            inner_steps: 2,
            max_outer: 300,
            patience: 40,
            seed: 0,
            layers: 2,
            hidden: 64,
            gcn_layers: 2,
            optimizer: Optimizer::Adam,
            fallback: EmptyClassFallback::Zero,
            pseudo_scope: PseudoScope::TrainAndVal,
            dropout: 0.5,
            dropout_c: 0.0,
            weight_decay: 5e-4,
            weight_decay_c: 5e-4,
            pseudo_max_epochs: 500,
            pseudo_patience: 50,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.lr_c <= 0.0 || self.lr_g <= 0.0 || self.lr_phi <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.inner_steps == 0 {
            return Err(Error::Config("inner steps must be at least 1".into()));
        }
        if self.layers == 0 {
            return Err(Error::Config("label-wise depth must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct History {
    pub train_loss: Vec<f64>,
    pub val_loss: Vec<f64>,
    pub val_accuracy: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SplitAccuracy {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TrainReport {
    pub variant: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub outer_iterations: usize,
    pub best_iteration: usize,
    pub history: History,
    /// Accuracy of the variant's main (combined) prediction.
    pub combined: SplitAccuracy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labelwise_branch: Option<SplitAccuracy>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homophilic_branch: Option<SplitAccuracy>,
    /// Mixture weight of the label-wise branch, for runs that learn one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weight_fc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub phi: Option<[f64; 2]>,
    pub wall_clock_seconds: f64,
}

impl TrainReport {
    fn new(variant: Variant, config: &TrainConfig) -> Self {
        Self {
            variant: variant.as_str().to_string(),
            seed: config.seed,
            config: config.clone(),
            outer_iterations: 0,
            best_iteration: 0,
            history: History::default(),
            combined: SplitAccuracy {
                train: 0.0,
                val: 0.0,
                test: 0.0,
            },
            labelwise_branch: None,
            homophilic_branch: None,
            weight_fc: None,
            phi: None,
            wall_clock_seconds: 0.0,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub models: Models,
    pub weights: SelectionWeights,
    pub report: TrainReport,
}

/// Validation-side stopping state. The returned snapshot is the best
/// (accuracy, then loss) iterate; patience runs from the last improvement of
/// either metric, so training continues while validation loss still falls
/// along an accuracy plateau — which is exactly when the selection weights
/// are still drifting toward the better branch.
struct ValTracker {
    best_acc: f64,
    best_loss: f64,
    snapshot_acc: f64,
    snapshot_loss: f64,
    since_improvement: usize,
}

impl ValTracker {
    fn new() -> Self {
        Self {
            best_acc: f64::NEG_INFINITY,
            best_loss: f64::INFINITY,
            snapshot_acc: f64::NEG_INFINITY,
            snapshot_loss: f64::INFINITY,
            since_improvement: 0,
        }
    }

    /// Returns (snapshot_updated, out_of_patience).
    fn observe(&mut self, acc: f64, loss: f64, patience: usize) -> (bool, bool) {
        let mut improved = false;
        if acc > self.best_acc {
            self.best_acc = acc;
            improved = true;
        }
        if loss < self.best_loss {
            self.best_loss = loss;
            improved = true;
        }
        if improved {
            self.since_improvement = 0;
        } else {
            self.since_improvement += 1;
        }
        let snapshot = acc > self.snapshot_acc
            || (acc == self.snapshot_acc && loss < self.snapshot_loss);
        if snapshot {
            self.snapshot_acc = acc;
            self.snapshot_loss = loss;
        }
        (snapshot, self.since_improvement > patience)
    }
}

fn derived_seed(seed: u64, stream: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(stream)
}

fn split_accuracy(
    probs: &DenseMatrix,
    graph: &Graph,
) -> Result<SplitAccuracy> {
    Ok(SplitAccuracy {
        train: accuracy(probs, graph.labels(), graph.train_mask())?,
        val: accuracy(probs, graph.labels(), graph.val_mask())?,
        test: accuracy(probs, graph.labels(), graph.test_mask())?,
    })
}

fn require_masks(graph: &Graph) -> Result<()> {
    if graph.train_mask().iter().all(|m| !m) {
        return Err(Error::EmptyMask("training"));
    }
    if graph.val_mask().iter().all(|m| !m) {
        return Err(Error::EmptyMask("validation"));
    }
    Ok(())
}

fn class_labels(graph: &Graph) -> Vec<usize> {
    graph.labels().iter().map(|l| l.unwrap_or(0)).collect()
}

/// Sum of the elementwise product; the loss sensitivity to one mixture weight.
fn weight_sensitivity(grad: &DenseMatrix, probs: &DenseMatrix) -> f64 {
    grad.values()
        .iter()
        .zip(probs.values())
        .map(|(g, p)| g * p)
        .sum()
}

/// Gradient of the loss with respect to (phi1, phi2) given the sensitivities
/// to the mixture weights. Routed through the softmax so the two components
/// always sum to zero.
fn phi_gradient(weights: &SelectionWeights, a1: f64, a2: f64) -> Result<DenseMatrix> {
    let (w1, w2) = weights.mixture();
    let upstream = DenseMatrix::new(1, 2, vec![a1, a2])?;
    let mixture = DenseMatrix::new(1, 2, vec![w1, w2])?;
    row_softmax_backward(&upstream, &mixture)
}

/// Train the full model (Variant::Full).
pub fn train(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    run_ablation(graph, config, Variant::Full)
}

/// Train the requested variant under the graph's splits.
pub fn run_ablation(graph: &Graph, config: &TrainConfig, variant: Variant) -> Result<TrainOutcome> {
    config.validate()?;
    require_masks(graph)?;
    let started = Instant::now();
    let mut outcome = match variant {
        Variant::Full | Variant::GcnPseudoLabels => train_combined(graph, config, variant),
        Variant::LabelwiseOnly => train_labelwise_only(graph, config),
        Variant::GcnOnly => train_gcn_only(graph, config),
        Variant::MlpOnly => train_mlp_only(graph, config),
    }?;
    outcome.report.wall_clock_seconds = started.elapsed().as_secs_f64();
    Ok(outcome)
}

fn pseudo_config(config: &TrainConfig) -> PseudoTrainConfig {
    PseudoTrainConfig {
        max_epochs: config.pseudo_max_epochs,
        patience: config.pseudo_patience,
        lr: 0.01,
        hidden: config.hidden,
        optimizer: config.optimizer,
        seed: derived_seed(config.seed, 0),
    }
}

fn build_pseudo(
    graph: &Graph,
    config: &TrainConfig,
    variant: Variant,
    a_hat: &SparseMatrix,
) -> Result<(PseudoModel, LabelAssignment)> {
    let pseudo = if variant == Variant::GcnPseudoLabels {
        let gcn = train_gcn_branch(graph, config, a_hat, derived_seed(config.seed, 0))?.0;
        PseudoModel::Gcn(gcn)
    } else {
        PseudoModel::Mlp(train_pseudo_predictor(graph, &pseudo_config(config))?)
    };
    let probs = pseudo.probabilities(graph, a_hat)?;
    let assignment = assign_labels(graph, &probs, config.pseudo_scope)?;
    Ok((pseudo, assignment))
}

fn train_combined(
    graph: &Graph,
    config: &TrainConfig,
    variant: Variant,
) -> Result<TrainOutcome> {
    let a_hat = normalized_adjacency(graph);
    let labels = class_labels(graph);

    // Pseudo labels are produced once, before the alternating loop; the
    // class operators stay frozen for the whole run.
    let (pseudo, assignment) = build_pseudo(graph, config, variant, &a_hat)?;
    let class_adj = build_class_adjacency(graph, &assignment)?;

    let mut labelwise = LwGnn::new(
        graph.feature_dim(),
        graph.num_classes(),
        config.layers,
        config.hidden,
        config.fallback,
        config.dropout_c,
        derived_seed(config.seed, 1),
    )?;
    let mut gcn = Gcn::new(
        graph.feature_dim(),
        graph.num_classes(),
        config.gcn_layers,
        config.hidden,
        config.dropout,
        derived_seed(config.seed, 2),
    )?;
    let mut phi_store = ParameterStore::new();
    phi_store.insert_zeros("phi", 1, 2);
    let mut dropout_stream = ChaCha8Rng::seed_from_u64(derived_seed(config.seed, 3));

    let mut report = TrainReport::new(variant, config);
    let mut tracker = ValTracker::new();
    let mut best_snapshot = (labelwise.clone(), gcn.clone(), selection_of(&phi_store), 0usize);

    for outer in 0..config.max_outer {
        let weights = selection_of(&phi_store);

        // Upper level: validation loss of the combined prediction at the
        // current parameters, gradients stopped at the branch outputs.
        let (y_c, _) = labelwise.forward(graph.features(), &class_adj, None)?;
        let (y_g, _) = gcn.forward(&a_hat, graph.features(), None)?;
        let combined = combine_predictions(&y_c, &y_g, &weights)?;
        let (val_loss, g_val) = masked_cross_entropy(&combined, &labels, graph.val_mask())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at iteration {outer}")));
        }
        let val_acc = accuracy(&combined, graph.labels(), graph.val_mask())?;

        let (snapshot, stop) = tracker.observe(val_acc, val_loss, config.patience);
        if snapshot {
            best_snapshot = (labelwise.clone(), gcn.clone(), weights, outer);
        }

        let a1 = weight_sensitivity(&g_val, &y_c);
        let a2 = weight_sensitivity(&g_val, &y_g);
        phi_store.add_gradient("phi", &phi_gradient(&weights, a1, a2)?)?;
        phi_store.step(config.optimizer, config.lr_phi);

        // Lower level: T joint steps on the training loss with the mixture
        // frozen at its freshly updated value.
        let weights = selection_of(&phi_store);
        let (w1, w2) = weights.mixture();
        let mut last_train_loss = f64::NAN;
        for _ in 0..config.inner_steps {
            let lw_seed = dropout_stream.next_u64();
            let gcn_seed = dropout_stream.next_u64();
            let (y_c_t, acts) = labelwise.forward(graph.features(), &class_adj, Some(lw_seed))?;
            let (y_g_t, cache) = gcn.forward(&a_hat, graph.features(), Some(gcn_seed))?;
            let combined_t = combine_predictions(&y_c_t, &y_g_t, &weights)?;
            let (train_loss, g_train) =
                masked_cross_entropy(&combined_t, &labels, graph.train_mask())?;
            if !train_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at iteration {outer}")));
            }
            last_train_loss = train_loss;

            let mut g_c = g_train.clone();
            for v in g_c.values_mut() {
                *v *= w1;
            }
            let mut g_g = g_train;
            for v in g_g.values_mut() {
                *v *= w2;
            }
            labelwise.backward(graph.features(), &class_adj, &acts, &g_c)?;
            gcn.backward(&a_hat, &cache, &g_g)?;
            gcn.store.apply_weight_decay("w0", config.weight_decay);
            apply_labelwise_decay(&mut labelwise, config.weight_decay_c);
            labelwise.store.step(config.optimizer, config.lr_c);
            gcn.store.step(config.optimizer, config.lr_g);
        }
        labelwise.store.check_finite("label-wise branch")?;
        gcn.store.check_finite("homophilic branch")?;

        report.history.train_loss.push(last_train_loss);
        report.history.val_loss.push(val_loss);
        report.history.val_accuracy.push(val_acc);
        report.outer_iterations = outer + 1;

        if stop {
            break;
        }
    }

    let (labelwise, gcn, weights, best_iter) = best_snapshot;
    report.best_iteration = best_iter;

    let (y_c, _) = labelwise.forward(graph.features(), &class_adj, None)?;
    let (y_g, _) = gcn.forward(&a_hat, graph.features(), None)?;
    let combined = combine_predictions(&y_c, &y_g, &weights)?;
    report.combined = split_accuracy(&combined, graph)?;
    report.labelwise_branch = Some(split_accuracy(&y_c, graph)?);
    report.homophilic_branch = Some(split_accuracy(&y_g, graph)?);
    let (w1, _) = weights.mixture();
    report.weight_fc = Some(w1);
    report.phi = Some([weights.phi1, weights.phi2]);

    Ok(TrainOutcome {
        models: Models::Combined {
            pseudo,
            assignment,
            class_adj,
            labelwise,
            gcn,
            a_hat,
        },
        weights,
        report,
    })
}

fn apply_labelwise_decay(model: &mut LwGnn, decay: f64) {
    if decay == 0.0 {
        return;
    }
    let names: Vec<String> = model.store.names().map(str::to_string).collect();
    for name in names {
        model.store.apply_weight_decay(&name, decay);
    }
}

fn selection_of(phi_store: &ParameterStore) -> SelectionWeights {
    let phi = phi_store.value("phi");
    SelectionWeights {
        phi1: phi.get(0, 0),
        phi2: phi.get(0, 1),
    }
}

/// Shared single-branch training loop: per outer iteration, one validation
/// snapshot followed by `inner_steps` gradient steps on the branch's own
/// training loss.
fn train_branch_loop<M, FwdEval, FwdTrain>(
    graph: &Graph,
    config: &TrainConfig,
    model: &mut M,
    mut forward_eval: FwdEval,
    mut forward_train: FwdTrain,
    report: &mut TrainReport,
) -> Result<usize>
where
    M: Clone,
    FwdEval: FnMut(&M) -> Result<DenseMatrix>,
    FwdTrain: FnMut(&mut M, &[usize], u64) -> Result<f64>,
{
    let labels = class_labels(graph);
    let mut dropout_stream = ChaCha8Rng::seed_from_u64(derived_seed(config.seed, 3));
    let mut tracker = ValTracker::new();
    let mut best = (model.clone(), 0usize);

    for outer in 0..config.max_outer {
        let probs = forward_eval(model)?;
        let (val_loss, _) = masked_cross_entropy(&probs, &labels, graph.val_mask())?;
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at iteration {outer}")));
        }
        let val_acc = accuracy(&probs, graph.labels(), graph.val_mask())?;
        let (snapshot, stop) = tracker.observe(val_acc, val_loss, config.patience);
        if snapshot {
            best = (model.clone(), outer);
        }

        let mut last_train_loss = f64::NAN;
        for _ in 0..config.inner_steps {
            last_train_loss = forward_train(model, &labels, dropout_stream.next_u64())?;
            if !last_train_loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at iteration {outer}")));
            }
        }

        report.history.train_loss.push(last_train_loss);
        report.history.val_loss.push(val_loss);
        report.history.val_accuracy.push(val_acc);
        report.outer_iterations = outer + 1;

        if stop {
            break;
        }
    }
    let (best_model, best_iter) = best;
    *model = best_model;
    Ok(best_iter)
}

fn train_labelwise_only(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    let a_hat = normalized_adjacency(graph);
    let (pseudo, assignment) = build_pseudo(graph, config, Variant::LabelwiseOnly, &a_hat)?;
    let class_adj = build_class_adjacency(graph, &assignment)?;
    let mut model = LwGnn::new(
        graph.feature_dim(),
        graph.num_classes(),
        config.layers,
        config.hidden,
        config.fallback,
        config.dropout_c,
        derived_seed(config.seed, 1),
    )?;

    let mut report = TrainReport::new(Variant::LabelwiseOnly, config);
    let best_iter = train_branch_loop(
        graph,
        config,
        &mut model,
        |m: &LwGnn| Ok(m.forward(graph.features(), &class_adj, None)?.0),
        |m: &mut LwGnn, labels: &[usize], dropout_seed: u64| {
            let (probs, acts) = m.forward(graph.features(), &class_adj, Some(dropout_seed))?;
            let (loss, grad) = masked_cross_entropy(&probs, labels, graph.train_mask())?;
            m.backward(graph.features(), &class_adj, &acts, &grad)?;
            apply_labelwise_decay(m, config.weight_decay_c);
            m.store.step(config.optimizer, config.lr_c);
            Ok(loss)
        },
        &mut report,
    )?;
    report.best_iteration = best_iter;

    let (probs, _) = model.forward(graph.features(), &class_adj, None)?;
    report.combined = split_accuracy(&probs, graph)?;
    report.labelwise_branch = Some(report.combined.clone());

    Ok(TrainOutcome {
        models: Models::LabelwiseOnly {
            pseudo,
            assignment,
            class_adj,
            model,
        },
        weights: SelectionWeights::default(),
        report,
    })
}

fn train_gcn_branch(
    graph: &Graph,
    config: &TrainConfig,
    a_hat: &SparseMatrix,
    seed: u64,
) -> Result<(Gcn, TrainReport)> {
    let mut model = Gcn::new(
        graph.feature_dim(),
        graph.num_classes(),
        config.gcn_layers,
        config.hidden,
        config.dropout,
        seed,
    )?;
    let mut report = TrainReport::new(Variant::GcnOnly, config);
    let weight_decay = config.weight_decay;
    let best_iter = train_branch_loop(
        graph,
        config,
        &mut model,
        |m: &Gcn| Ok(m.forward(a_hat, graph.features(), None)?.0),
        |m: &mut Gcn, labels: &[usize], dropout_seed: u64| {
            let (probs, cache) = m.forward(a_hat, graph.features(), Some(dropout_seed))?;
            let (loss, grad) = masked_cross_entropy(&probs, labels, graph.train_mask())?;
            m.backward(a_hat, &cache, &grad)?;
            m.store.apply_weight_decay("w0", weight_decay);
            m.store.step(config.optimizer, config.lr_g);
            Ok(loss)
        },
        &mut report,
    )?;
    report.best_iteration = best_iter;
    Ok((model, report))
}

fn train_gcn_only(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    let a_hat = normalized_adjacency(graph);
    let (model, mut report) =
        train_gcn_branch(graph, config, &a_hat, derived_seed(config.seed, 2))?;
    let (probs, _) = model.forward(&a_hat, graph.features(), None)?;
    report.combined = split_accuracy(&probs, graph)?;
    report.homophilic_branch = Some(report.combined.clone());
    Ok(TrainOutcome {
        models: Models::GcnOnly { model, a_hat },
        weights: SelectionWeights::default(),
        report,
    })
}

fn train_mlp_only(graph: &Graph, config: &TrainConfig) -> Result<TrainOutcome> {
    let model = train_pseudo_predictor(graph, &pseudo_config(config))?;
    let mut report = TrainReport::new(Variant::MlpOnly, config);
    let probs = model.forward(graph.features())?;
    report.combined = split_accuracy(&probs, graph)?;
    Ok(TrainOutcome {
        models: Models::MlpOnly { model },
        weights: SelectionWeights::default(),
        report,
    })
}

/// Accuracies of the label-wise-only model and a GCN of matching depth for
/// each requested depth, averaged over the given seeds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthSweepEntry {
    pub depth: usize,
    pub labelwise_accuracies: Vec<f64>,
    pub gcn_accuracies: Vec<f64>,
    pub labelwise_mean: f64,
    pub labelwise_std: f64,
    pub gcn_mean: f64,
    pub gcn_std: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DepthSweepReport {
    pub entries: Vec<DepthSweepEntry>,
    pub seeds: Vec<u64>,
}

pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn depth_sweep(
    graph: &Graph,
    config: &TrainConfig,
    depths: &[usize],
    seeds: &[u64],
) -> Result<DepthSweepReport> {
    if depths.is_empty() {
        return Err(Error::Config("depth sweep needs at least one depth".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("depth sweep needs at least one seed".into()));
    }
    let mut entries = Vec::with_capacity(depths.len());
    for &depth in depths {
        let mut lw_acc = Vec::with_capacity(seeds.len());
        let mut gcn_acc = Vec::with_capacity(seeds.len());
        for &seed in seeds {
            let mut cfg = config.clone();
            cfg.seed = seed;
            cfg.layers = depth;
            cfg.gcn_layers = depth.max(2);
            let lw = run_ablation(graph, &cfg, Variant::LabelwiseOnly)?;
            lw_acc.push(lw.report.combined.test);
            let gcn = run_ablation(graph, &cfg, Variant::GcnOnly)?;
            gcn_acc.push(gcn.report.combined.test);
        }
        let (lm, ls) = mean_std(&lw_acc);
        let (gm, gs) = mean_std(&gcn_acc);
        entries.push(DepthSweepEntry {
            depth,
            labelwise_accuracies: lw_acc,
            gcn_accuracies: gcn_acc,
            labelwise_mean: lm,
            labelwise_std: ls,
            gcn_mean: gm,
            gcn_std: gs,
        });
    }
    Ok(DepthSweepReport {
        entries,
        seeds: seeds.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{generate_synthetic, split_nodes, SyntheticSpec};
    use crate::numerics::{grad_check, GradCheckConfig};

    fn tiny_graph(h: f64, seed: u64) -> Graph {
        let spec = SyntheticSpec {
            num_nodes: 60,
            num_classes: 3,
            target_homophily: h,
            avg_degree: 4.0,
            feature_dim: 5,
            class_center_separation: 3.0,
            noise_scale: 1.0,
            seed,
        };
        let g = generate_synthetic(&spec).unwrap();
        let (train, val, test) = split_nodes(&g, 4, 15, seed).unwrap();
        g.with_masks(train, val, test).unwrap()
    }

    fn quick_config(seed: u64) -> TrainConfig {
        TrainConfig {
            seed,
            max_outer: 25,
            patience: 10,
            hidden: 8,
            pseudo_max_epochs: 60,
            pseudo_patience: 20,
            ..Default::default()
        }
    }

    #[test]
    fn symmetric_phi_averages_predictions() {
        let y_c = DenseMatrix::new(1, 2, vec![1.0, 0.0]).unwrap();
        let y_g = DenseMatrix::new(1, 2, vec![0.0, 1.0]).unwrap();
        let combined = combine_predictions(
            &y_c,
            &y_g,
            &SelectionWeights {
                phi1: 0.0,
                phi2: 0.0,
            },
        )
        .unwrap();
        assert_eq!(combined.values(), &[0.5, 0.5]);
    }

    #[test]
    fn log_three_phi_gives_three_quarters_weight() {
        let w = SelectionWeights {
            phi1: 3.0f64.ln(),
            phi2: 0.0,
        };
        let (w1, w2) = w.mixture();
        assert!((w1 - 0.75).abs() < 1e-12);
        assert!((w2 - 0.25).abs() < 1e-12);
    }

    #[test]
    fn equal_branch_outputs_are_a_fixed_point() {
        let y = DenseMatrix::new(2, 2, vec![0.3, 0.7, 0.9, 0.1]).unwrap();
        for phi1 in [-3.0, 0.0, 5.0] {
            let combined = combine_predictions(
                &y,
                &y,
                &SelectionWeights { phi1, phi2: 0.2 },
            )
            .unwrap();
            for (a, b) in combined.values().iter().zip(y.values()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn combined_rows_stay_stochastic() {
        let y_c = DenseMatrix::new(2, 3, vec![0.2, 0.3, 0.5, 1.0, 0.0, 0.0]).unwrap();
        let y_g = DenseMatrix::new(2, 3, vec![0.6, 0.2, 0.2, 0.1, 0.8, 0.1]).unwrap();
        let combined = combine_predictions(
            &y_c,
            &y_g,
            &SelectionWeights {
                phi1: 1.3,
                phi2: -0.4,
            },
        )
        .unwrap();
        for i in 0..2 {
            let sum: f64 = combined.row(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_shift_invariance() {
        let y_c = DenseMatrix::new(1, 2, vec![0.9, 0.1]).unwrap();
        let y_g = DenseMatrix::new(1, 2, vec![0.2, 0.8]).unwrap();
        let a = combine_predictions(
            &y_c,
            &y_g,
            &SelectionWeights {
                phi1: 0.7,
                phi2: -0.3,
            },
        )
        .unwrap();
        let b = combine_predictions(
            &y_c,
            &y_g,
            &SelectionWeights {
                phi1: 0.7 + 10.0,
                phi2: -0.3 + 10.0,
            },
        )
        .unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn phi_gradients_sum_to_zero_and_match_finite_differences() {
        // Fixed branch outputs; the only parameter is phi.
        let y_c = DenseMatrix::new(3, 2, vec![0.9, 0.1, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let y_g = DenseMatrix::new(3, 2, vec![0.3, 0.7, 0.5, 0.5, 0.1, 0.9]).unwrap();
        let labels = vec![0usize, 1, 0];
        let mask = vec![true, true, true];

        let mut store = ParameterStore::new();
        store.insert(
            "phi",
            DenseMatrix::new(1, 2, vec![0.4, -0.2]).unwrap(),
        );
        let y_c2 = y_c.clone();
        let y_g2 = y_g.clone();
        let report = grad_check(
            &mut store,
            move |store: &mut ParameterStore| {
                let weights = selection_of(store);
                let combined = combine_predictions(&y_c2, &y_g2, &weights)?;
                let (loss, grad) = masked_cross_entropy(&combined, &labels, &mask)?;
                let a1 = weight_sensitivity(&grad, &y_c2);
                let a2 = weight_sensitivity(&grad, &y_g2);
                store.add_gradient("phi", &phi_gradient(&weights, a1, a2)?)?;
                Ok(loss)
            },
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(report.passed, "max rel error {}", report.max_rel_error);

        // Analytic antisymmetry.
        let weights = SelectionWeights {
            phi1: 0.4,
            phi2: -0.2,
        };
        let combined = combine_predictions(&y_c, &y_g, &weights).unwrap();
        let (_, grad) = masked_cross_entropy(&combined, &[0, 1, 0], &[true; 3]).unwrap();
        let a1 = weight_sensitivity(&grad, &y_c);
        let a2 = weight_sensitivity(&grad, &y_g);
        let g = phi_gradient(&weights, a1, a2).unwrap();
        assert!((g.get(0, 0) + g.get(0, 1)).abs() < 1e-10);
    }

    #[test]
    fn validation_loss_decreases_toward_the_better_branch() {
        // Perfect first branch, uniform second: loss must strictly decrease
        // as the mixture weight on the first branch grows.
        let labels = vec![0usize, 1];
        let mask = vec![true, true];
        let y_c = DenseMatrix::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let y_g = DenseMatrix::new(2, 2, vec![0.5, 0.5, 0.5, 0.5]).unwrap();
        let mut previous = f64::INFINITY;
        for k in 1..10 {
            let w1 = k as f64 / 10.0;
            let phi1 = (w1 / (1.0 - w1)).ln();
            let combined = combine_predictions(
                &y_c,
                &y_g,
                &SelectionWeights { phi1, phi2: 0.0 },
            )
            .unwrap();
            let (loss, _) = masked_cross_entropy(&combined, &labels, &mask).unwrap();
            assert!(loss < previous, "loss not decreasing at w1={w1}");
            previous = loss;
        }
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let g = tiny_graph(0.5, 1);
        let mut probs = DenseMatrix::zeros(g.num_nodes(), g.num_classes());
        for v in 0..g.num_nodes() {
            probs.set(v, g.label(v).unwrap(), 1.0);
        }
        assert_eq!(accuracy(&probs, g.labels(), g.test_mask()).unwrap(), 1.0);
    }

    #[test]
    fn uniform_predictor_scores_class_frequency() {
        let spec = SyntheticSpec {
            num_nodes: 1000,
            num_classes: 5,
            target_homophily: 0.5,
            avg_degree: 4.0,
            feature_dim: 6,
            class_center_separation: 1.0,
            noise_scale: 1.0,
            seed: 3,
        };
        let g = generate_synthetic(&spec).unwrap();
        let mut probs = DenseMatrix::zeros(g.num_nodes(), 5);
        probs.fill(0.2);
        let mask = vec![true; g.num_nodes()];
        let acc = accuracy(&probs, g.labels(), &mask).unwrap();
        // Uniform rows tie-break to class 0, so this measures class-0 frequency.
        assert!((acc - 0.2).abs() <= 0.05, "accuracy {acc}");
    }

    #[test]
    fn complement_predictor_mirrors_binary_accuracy() {
        let labels = vec![Some(0), Some(1), Some(0), Some(1)];
        let mask = vec![true; 4];
        let probs =
            DenseMatrix::new(4, 2, vec![0.9, 0.1, 0.3, 0.7, 0.2, 0.8, 0.6, 0.4]).unwrap();
        let mut complement = DenseMatrix::zeros(4, 2);
        for v in 0..4 {
            complement.set(v, 0, probs.get(v, 1));
            complement.set(v, 1, probs.get(v, 0));
        }
        let a = accuracy(&probs, &labels, &mask).unwrap();
        let b = accuracy(&complement, &labels, &mask).unwrap();
        assert!((a + b - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let probs = DenseMatrix::new(1, 2, vec![0.5, 0.5]).unwrap();
        assert!(accuracy(&probs, &[Some(0)], &[false]).is_err());
    }

    #[test]
    fn training_is_bit_deterministic() {
        let g = tiny_graph(0.3, 5);
        let cfg = quick_config(11);
        let a = train(&g, &cfg).unwrap();
        let b = train(&g, &cfg).unwrap();
        let mut ja = serde_json::to_value(&a.report).unwrap();
        let mut jb = serde_json::to_value(&b.report).unwrap();
        ja.as_object_mut().unwrap().remove("wall_clock_seconds");
        jb.as_object_mut().unwrap().remove("wall_clock_seconds");
        assert_eq!(ja, jb);
        assert_eq!(a.weights, b.weights);
    }

    #[test]
    fn training_never_reads_test_labels() {
        let g = tiny_graph(0.3, 7);
        let cfg = quick_config(13);
        let base = train(&g, &cfg).unwrap();

        // Scramble every test label; everything except test accuracies must
        // be unchanged.
        let mut labels = g.labels().to_vec();
        for v in 0..g.num_nodes() {
            if g.test_mask()[v] {
                labels[v] = Some((labels[v].unwrap() + 1) % g.num_classes());
            }
        }
        let scrambled = g.with_labels(labels).unwrap();
        let altered = train(&scrambled, &cfg).unwrap();

        assert_eq!(base.weights, altered.weights);
        assert_eq!(base.report.history, altered.report.history);
        assert_eq!(base.report.combined.train, altered.report.combined.train);
        assert_eq!(base.report.combined.val, altered.report.combined.val);
        assert_ne!(base.report.combined.test, altered.report.combined.test);
    }

    #[test]
    fn ablation_variants_produce_reports() {
        let g = tiny_graph(0.2, 3);
        for variant in [
            Variant::LabelwiseOnly,
            Variant::GcnOnly,
            Variant::MlpOnly,
            Variant::GcnPseudoLabels,
        ] {
            let outcome = run_ablation(&g, &quick_config(2), variant).unwrap();
            assert_eq!(outcome.report.variant, variant.as_str());
            assert!(outcome.report.combined.test >= 0.0);
            assert!(outcome.report.combined.test <= 1.0);
            match variant {
                Variant::GcnPseudoLabels => assert!(outcome.report.weight_fc.is_some()),
                Variant::Full => unreachable!(),
                _ => assert!(outcome.report.weight_fc.is_none()),
            }
        }
    }

    #[test]
    fn depth_sweep_single_entry() {
        let g = tiny_graph(0.2, 3);
        let report = depth_sweep(&g, &quick_config(2), &[2], &[1, 2]).unwrap();
        assert_eq!(report.entries.len(), 1);
        assert_eq!(report.entries[0].labelwise_accuracies.len(), 2);
    }

    #[test]
    fn evaluate_matches_report_accuracy() {
        let g = tiny_graph(0.3, 9);
        let outcome = train(&g, &quick_config(4)).unwrap();
        let acc = evaluate(&outcome.models, &outcome.weights, &g, g.test_mask()).unwrap();
        assert!((acc - outcome.report.combined.test).abs() < 1e-12);
    }
}
