//! Label-wise message passing: per-class aggregation operators, stacked
//! layers, max-pool read-out over layer depth, and the classification head.
//!
//! Each layer first projects its input to width `p`, then aggregates the
//! projected neighbor vectors separately per assigned class, and concatenates
//! the self representation with the `c` class aggregates. Neighborhood
//! context is therefore kept apart per class instead of being averaged away,
//! which is what makes the representation useful under heterophily.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gcn::dropout_mask;
use crate::graph::Graph;
use crate::numerics::{
    dense_matmul, dense_matmul_nt, dense_matmul_tn, maxpool_stack, maxpool_stack_backward, relu,
    relu_backward, row_softmax, row_softmax_backward, DenseMatrix, ParameterStore, SparseMatrix,
};
use crate::pseudo::LabelAssignment;

/// What a node's class-i aggregate becomes when it has no class-i neighbors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EmptyClassFallback {
    /// Zero vector.
    #[default]
    Zero,
    /// Mean projected embedding of all nodes assigned to the class.
    ClassAverage,
}

/// The `c` per-class normalized aggregation operators plus the neighbor
/// counts they were built from.
#[derive(Debug, Clone)]
pub struct ClassAdjacency {
    ops: Vec<SparseMatrix>,
    /// d_{v,i} laid out row-major: counts[v * c + i].
    counts: Vec<u32>,
    /// Nodes assigned to each class (drives the class-average fallback).
    members: Vec<Vec<usize>>,
    num_nodes: usize,
    num_classes: usize,
}

impl ClassAdjacency {
    pub fn operator(&self, class: usize) -> &SparseMatrix {
        &self.ops[class]
    }

    pub fn neighbor_count(&self, v: usize, class: usize) -> u32 {
        self.counts[v * self.num_classes + class]
    }

    pub fn members(&self, class: usize) -> &[usize] {
        &self.members[class]
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn total_nnz(&self) -> usize {
        self.ops.iter().map(SparseMatrix::nnz).sum()
    }
}

/// For each edge (v,u) with assignment(u) = i, the class-i operator carries
/// entry (v,u) = 1/sqrt(max(d_{v,i},1) * max(d_{u,i},1)). The max(.,1) clamp
/// covers aggregated neighbors that themselves have no class-i neighbor,
/// where the plain product would divide by zero.
pub fn build_class_adjacency(graph: &Graph, assignment: &LabelAssignment) -> Result<ClassAdjacency> {
    let n = graph.num_nodes();
    let c = graph.num_classes();
    if assignment.len() != n {
        return Err(Error::Consistency(format!(
            "assignment covers {} of {n} nodes",
            assignment.len()
        )));
    }

    let mut counts = vec![0u32; n * c];
    for v in 0..n {
        for &u in graph.neighbors(v) {
            counts[v * c + assignment.class_of(u)] += 1;
        }
    }

    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for v in 0..n {
        members[assignment.class_of(v)].push(v);
    }

    let mut rows_per_class: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); n]; c];
    for v in 0..n {
        for &u in graph.neighbors(v) {
            let i = assignment.class_of(u);
            let d_v = counts[v * c + i].max(1) as f64;
            let d_u = counts[u * c + i].max(1) as f64;
            rows_per_class[i][v].push((u, 1.0 / (d_v * d_u).sqrt()));
        }
    }

    let ops = rows_per_class
        .into_iter()
        .map(|rows| SparseMatrix::from_rows(n, n, &rows))
        .collect::<Result<Vec<_>>>()?;

    Ok(ClassAdjacency {
        ops,
        counts,
        members: members.clone(),
        num_nodes: n,
        num_classes: c,
    })
}

/// Stacked label-wise layers with a max-pool read-out and softmax head.
///
/// Parameters: "w1".."wK" are the per-layer projections (p x input width,
/// no bias); "w_head" (c x (c+1)p) and "b_head" form the classifier.
#[derive(Debug, Clone)]
pub struct LwGnn {
    pub store: ParameterStore,
    layers: usize,
    width: usize,
    fallback: EmptyClassFallback,
    num_classes: usize,
    dropout: f64,
}

/// Intermediate state of one forward pass, kept for the backward pass and
/// for representation analysis.
pub struct LayerActivations {
    /// Pre-activation concatenations, one per layer. Column block 0 holds the
    /// projected self term, block i+1 the class-i aggregate.
    concat_pre: Vec<DenseMatrix>,
    /// Post-activation layer outputs H^(1)..H^(K).
    hidden: Vec<DenseMatrix>,
    /// Dropout masks applied to each layer's input (training mode only).
    input_masks: Vec<Option<DenseMatrix>>,
    pooled: DenseMatrix,
    pool_argmax: Vec<u8>,
    probs: DenseMatrix,
    width: usize,
}

impl LayerActivations {
    pub fn probabilities(&self) -> &DenseMatrix {
        &self.probs
    }

    pub fn pooled(&self) -> &DenseMatrix {
        &self.pooled
    }

    pub fn hidden(&self, layer: usize) -> &DenseMatrix {
        &self.hidden[layer]
    }

    /// Last layer's post-activation rows; the representation used for
    /// similarity analysis.
    pub fn last_hidden(&self) -> &DenseMatrix {
        self.hidden.last().expect("at least one layer")
    }

    pub fn num_layers(&self) -> usize {
        self.hidden.len()
    }

    /// Projected self term of one layer.
    pub fn projected(&self, layer: usize) -> DenseMatrix {
        self.concat_pre[layer].column_block(0, self.width)
    }

    /// Class-i aggregate of one layer (pre-activation).
    pub fn class_aggregate(&self, layer: usize, class: usize) -> DenseMatrix {
        self.concat_pre[layer].column_block((class + 1) * self.width, self.width)
    }
}

impl LwGnn {
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        layers: usize,
        width: usize,
        fallback: EmptyClassFallback,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if layers == 0 {
            return Err(Error::Config("label-wise network needs at least one layer".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        let concat_width = (num_classes + 1) * width;
        for k in 0..layers {
            let input = if k == 0 { feature_dim } else { concat_width };
            store.insert_glorot(&format!("w{}", k + 1), width, input, &mut rng);
        }
        store.insert_glorot("w_head", num_classes, concat_width, &mut rng);
        store.insert_zeros("b_head", 1, num_classes);
        Ok(Self {
            store,
            layers,
            width,
            fallback,
            num_classes,
            dropout,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    pub fn width(&self) -> usize {
        self.width
    }

    fn layer_forward(
        &self,
        input: &DenseMatrix,
        mask: Option<&DenseMatrix>,
        layer: usize,
        class_adj: &ClassAdjacency,
    ) -> Result<(DenseMatrix, DenseMatrix)> {
        let w = self.store.value(&format!("w{}", layer + 1));
        let z = match mask {
            Some(m) => {
                let mut dropped = input.clone();
                dropped.hadamard_assign(m)?;
                dense_matmul_nt(&dropped, w)?
            }
            None => dense_matmul_nt(input, w)?,
        };
        let c = self.num_classes;
        let mut concat = DenseMatrix::zeros(input.rows(), (c + 1) * self.width);
        concat.set_column_block(0, &z);
        for i in 0..c {
            let mut agg = class_adj.operator(i).matmul_dense(&z)?;
            if self.fallback == EmptyClassFallback::ClassAverage {
                apply_class_average_rows(&mut agg, &z, class_adj, i);
            }
            concat.set_column_block((i + 1) * self.width, &agg);
        }
        let out = relu(&concat);
        Ok((concat, out))
    }

    /// Run all layers, pool over depth, and classify. Passing a dropout seed
    /// enables training-mode dropout on every layer input.
    pub fn forward(
        &self,
        features: &DenseMatrix,
        class_adj: &ClassAdjacency,
        dropout_seed: Option<u64>,
    ) -> Result<(DenseMatrix, LayerActivations)> {
        if features.rows() != class_adj.num_nodes() {
            return Err(Error::Consistency(format!(
                "features have {} rows for {} nodes",
                features.rows(),
                class_adj.num_nodes()
            )));
        }
        let mut concat_pre = Vec::with_capacity(self.layers);
        let mut hidden: Vec<DenseMatrix> = Vec::with_capacity(self.layers);
        let mut input_masks = Vec::with_capacity(self.layers);
        for k in 0..self.layers {
            let input = if k == 0 { features } else { &hidden[k - 1] };
            let mask = match dropout_seed {
                Some(seed) if self.dropout > 0.0 => Some(dropout_mask(
                    input.rows(),
                    input.cols(),
                    self.dropout,
                    seed.wrapping_add(k as u64),
                )?),
                _ => None,
            };
            let (pre, out) = self.layer_forward(input, mask.as_ref(), k, class_adj)?;
            concat_pre.push(pre);
            hidden.push(out);
            input_masks.push(mask);
        }
        let (pooled, pool_argmax) = maxpool_stack(&hidden)?;
        let mut logits = dense_matmul_nt(&pooled, self.store.value("w_head"))?;
        logits.add_row_broadcast(self.store.value("b_head"))?;
        let probs = row_softmax(&logits);
        let acts = LayerActivations {
            concat_pre,
            hidden,
            input_masks,
            pooled,
            pool_argmax,
            probs: probs.clone(),
            width: self.width,
        };
        Ok((probs, acts))
    }

    /// Accumulate parameter gradients given the loss gradient at the
    /// probability output.
    pub fn backward(
        &mut self,
        features: &DenseMatrix,
        class_adj: &ClassAdjacency,
        acts: &LayerActivations,
        grad_probs: &DenseMatrix,
    ) -> Result<()> {
        let g_logits = row_softmax_backward(grad_probs, &acts.probs)?;
        self.store
            .add_gradient("w_head", &dense_matmul_tn(&g_logits, &acts.pooled)?)?;
        self.store.add_gradient("b_head", &g_logits.column_sums())?;
        let g_pooled = dense_matmul(&g_logits, self.store.value("w_head"))?;
        let pool_grads = maxpool_stack_backward(&g_pooled, &acts.pool_argmax, self.layers);

        let c = self.num_classes;
        let mut carry: Option<DenseMatrix> = None;
        for k in (0..self.layers).rev() {
            let mut g_h = pool_grads[k].clone();
            if let Some(extra) = carry.take() {
                g_h.add_scaled(&extra, 1.0)?;
            }
            let g_concat = relu_backward(&g_h, &acts.concat_pre[k])?;
            let mut g_z = g_concat.column_block(0, self.width);
            for i in 0..c {
                let g_agg = g_concat.column_block((i + 1) * self.width, self.width);
                g_z.add_scaled(&class_adj.operator(i).transpose_matmul_dense(&g_agg)?, 1.0)?;
                if self.fallback == EmptyClassFallback::ClassAverage {
                    scatter_class_average_grad(&mut g_z, &g_agg, class_adj, i);
                }
            }
            let input = if k == 0 { features } else { &acts.hidden[k - 1] };
            let name = format!("w{}", k + 1);
            match &acts.input_masks[k] {
                Some(mask) => {
                    let mut dropped = input.clone();
                    dropped.hadamard_assign(mask)?;
                    self.store
                        .add_gradient(&name, &dense_matmul_tn(&g_z, &dropped)?)?;
                    if k > 0 {
                        let mut g_input = dense_matmul(&g_z, self.store.value(&name))?;
                        g_input.hadamard_assign(mask)?;
                        carry = Some(g_input);
                    }
                }
                None => {
                    self.store
                        .add_gradient(&name, &dense_matmul_tn(&g_z, input)?)?;
                    if k > 0 {
                        carry = Some(dense_matmul(&g_z, self.store.value(&name))?);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Overwrite rows with no class-i neighbors by the mean projected embedding
/// of the class (zero when the class has no members at all).
fn apply_class_average_rows(
    agg: &mut DenseMatrix,
    z: &DenseMatrix,
    class_adj: &ClassAdjacency,
    class: usize,
) {
    let members = class_adj.members(class);
    if members.is_empty() {
        return;
    }
    let mut mean = vec![0.0; z.cols()];
    for &u in members {
        for (m, &v) in mean.iter_mut().zip(z.row(u)) {
            *m += v;
        }
    }
    let inv = 1.0 / members.len() as f64;
    for m in mean.iter_mut() {
        *m *= inv;
    }
    for v in 0..agg.rows() {
        if class_adj.neighbor_count(v, class) == 0 {
            agg.row_mut(v).copy_from_slice(&mean);
        }
    }
}

/// Backward counterpart: fallback rows received the class mean, so their
/// gradient spreads uniformly over the class members.
fn scatter_class_average_grad(
    g_z: &mut DenseMatrix,
    g_agg: &DenseMatrix,
    class_adj: &ClassAdjacency,
    class: usize,
) {
    let members = class_adj.members(class);
    if members.is_empty() {
        return;
    }
    let mut total = vec![0.0; g_agg.cols()];
    let mut any = false;
    for v in 0..g_agg.rows() {
        if class_adj.neighbor_count(v, class) == 0 {
            any = true;
            for (t, &g) in total.iter_mut().zip(g_agg.row(v)) {
                *t += g;
            }
        }
    }
    if !any {
        return;
    }
    let inv = 1.0 / members.len() as f64;
    for &u in members {
        for (o, &t) in g_z.row_mut(u).iter_mut().zip(&total) {
            *o += t * inv;
        }
    }
}

/// Mean cosine similarity over intra-class and inter-class row pairs within
/// a mask, with binned histograms.
#[derive(Debug, Clone)]
pub struct SimilarityReport {
    pub intra_mean: f64,
    pub inter_mean: f64,
    pub intra_pairs: usize,
    pub inter_pairs: usize,
    /// 20 bins over [-1, 1].
    pub intra_hist: Vec<u64>,
    pub inter_hist: Vec<u64>,
    /// All-zero rows excluded from the analysis.
    pub excluded_rows: usize,
}

pub fn representation_similarity(
    representations: &DenseMatrix,
    labels: &[Option<usize>],
    mask: &[bool],
) -> Result<SimilarityReport> {
    if labels.len() != representations.rows() || mask.len() != representations.rows() {
        return Err(Error::Consistency(
            "similarity inputs disagree on node count".into(),
        ));
    }
    let mut selected: Vec<(usize, usize, f64)> = Vec::new(); // (row, label, norm)
    let mut excluded = 0usize;
    for v in 0..representations.rows() {
        if !mask[v] {
            continue;
        }
        let Some(y) = labels[v] else { continue };
        let norm: f64 = representations
            .row(v)
            .iter()
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt();
        if norm == 0.0 {
            excluded += 1;
            continue;
        }
        selected.push((v, y, norm));
    }
    let classes: std::collections::BTreeSet<usize> = selected.iter().map(|s| s.1).collect();
    if selected.len() < 2 || classes.len() < 2 {
        return Err(Error::Consistency(
            "similarity analysis needs at least two labeled nodes in two classes".into(),
        ));
    }

    const BINS: usize = 20;
    let mut report = SimilarityReport {
        intra_mean: 0.0,
        inter_mean: 0.0,
        intra_pairs: 0,
        inter_pairs: 0,
        intra_hist: vec![0; BINS],
        inter_hist: vec![0; BINS],
        excluded_rows: excluded,
    };
    for a in 0..selected.len() {
        let (va, ya, na) = selected[a];
        let row_a = representations.row(va);
        for &(vb, yb, nb) in &selected[a + 1..] {
            let mut dot = 0.0;
            for (x, y) in row_a.iter().zip(representations.row(vb)) {
                dot += x * y;
            }
            let cos = (dot / (na * nb)).clamp(-1.0, 1.0);
            let bin = (((cos + 1.0) / 2.0 * BINS as f64) as usize).min(BINS - 1);
            if ya == yb {
                report.intra_mean += cos;
                report.intra_pairs += 1;
                report.intra_hist[bin] += 1;
            } else {
                report.inter_mean += cos;
                report.inter_pairs += 1;
                report.inter_hist[bin] += 1;
            }
        }
    }
    if report.intra_pairs > 0 {
        report.intra_mean /= report.intra_pairs as f64;
    }
    if report.inter_pairs > 0 {
        report.inter_mean /= report.inter_pairs as f64;
    }
    Ok(report)
}
