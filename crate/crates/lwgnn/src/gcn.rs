//! The homophilic branch: a plain GCN over the symmetric-normalized
//! adjacency with self-loops. Two layers by default; depth is configurable
//! for the depth-sensitivity study. No biases, inverted dropout on layer
//! inputs during training.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::numerics::{
    dense_matmul, dense_matmul_nt, dense_matmul_tn, relu, relu_backward, row_softmax,
    row_softmax_backward, DenseMatrix, ParameterStore, SparseMatrix,
};

/// Multiplicative inverted-dropout mask: entries are 1/(1-rate) with
/// probability 1-rate and 0 otherwise.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Result<DenseMatrix> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")));
    }
    let mut mask = DenseMatrix::zeros(rows, cols);
    if rate == 0.0 {
        mask.fill(1.0);
        return Ok(mask);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let keep_scale = 1.0 / (1.0 - rate);
    for v in mask.values_mut() {
        if rng.random::<f64>() >= rate {
            *v = keep_scale;
        }
    }
    Ok(mask)
}

#[derive(Debug, Clone)]
pub struct Gcn {
    pub store: ParameterStore,
    layers: usize,
    dropout: f64,
}

pub struct GcnCache {
    /// Â·(dropped input), per layer.
    propagated: Vec<DenseMatrix>,
    /// Pre-activation outputs per layer; the last one is the logits.
    pre_activations: Vec<DenseMatrix>,
    masks: Vec<Option<DenseMatrix>>,
    probs: DenseMatrix,
}

impl GcnCache {
    pub fn probabilities(&self) -> &DenseMatrix {
        &self.probs
    }

    /// Final-layer output before the softmax; the representation used for
    /// similarity analysis.
    pub fn logits(&self) -> &DenseMatrix {
        self.pre_activations.last().expect("at least one layer")
    }
}

impl Gcn {
    /// `layers >= 2`: feature_dim -> hidden -> ... -> num_classes.
    pub fn new(
        feature_dim: usize,
        num_classes: usize,
        layers: usize,
        hidden: usize,
        dropout: f64,
        seed: u64,
    ) -> Result<Self> {
        if layers < 2 {
            return Err(Error::Config("GCN needs at least two layers".into()));
        }
        if !(0.0..1.0).contains(&dropout) {
            return Err(Error::Config(format!("dropout rate {dropout} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParameterStore::new();
        for l in 0..layers {
            let rows = if l == 0 { feature_dim } else { hidden };
            let cols = if l == layers - 1 { num_classes } else { hidden };
            store.insert_glorot(&format!("w{l}"), rows, cols, &mut rng);
        }
        Ok(Self {
            store,
            layers,
            dropout,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.layers
    }

    /// softmax(Â · relu(Â · X · W0) · W1 ...). Passing a dropout seed enables
    /// training-mode dropout on every layer input; `None` evaluates clean.
    pub fn forward(
        &self,
        a_hat: &SparseMatrix,
        features: &DenseMatrix,
        dropout_seed: Option<u64>,
    ) -> Result<(DenseMatrix, GcnCache)> {
        let mut propagated = Vec::with_capacity(self.layers);
        let mut pre_activations = Vec::with_capacity(self.layers);
        let mut masks = Vec::with_capacity(self.layers);
        let mut h = features.clone();
        for l in 0..self.layers {
            let mask = match dropout_seed {
                Some(seed) if self.dropout > 0.0 => Some(dropout_mask(
                    h.rows(),
                    h.cols(),
                    self.dropout,
                    seed.wrapping_add(l as u64),
                )?),
                _ => None,
            };
            if let Some(m) = &mask {
                h.hadamard_assign(m)?;
            }
            let s = a_hat.matmul_dense(&h)?;
            let p = dense_matmul(&s, self.store.value(&format!("w{l}")))?;
            propagated.push(s);
            masks.push(mask);
            h = if l < self.layers - 1 { relu(&p) } else { p.clone() };
            pre_activations.push(p);
        }
        let probs = row_softmax(&h);
        let cache = GcnCache {
            propagated,
            pre_activations,
            masks,
            probs: probs.clone(),
        };
        Ok((probs, cache))
    }

    pub fn backward(
        &mut self,
        a_hat: &SparseMatrix,
        cache: &GcnCache,
        grad_probs: &DenseMatrix,
    ) -> Result<()> {
        let mut g = row_softmax_backward(grad_probs, &cache.probs)?;
        for l in (0..self.layers).rev() {
            let name = format!("w{l}");
            self.store
                .add_gradient(&name, &dense_matmul_tn(&cache.propagated[l], &g)?)?;
            if l == 0 {
                break;
            }
            let g_s = dense_matmul_nt(&g, self.store.value(&name))?;
            let mut g_h = a_hat.transpose_matmul_dense(&g_s)?;
            if let Some(m) = &cache.masks[l] {
                g_h.hadamard_assign(m)?;
            }
            g = relu_backward(&g_h, &cache.pre_activations[l - 1])?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{normalized_adjacency, Graph};

    fn graph_of(n: usize, edges: &[(usize, usize)], d: usize) -> Graph {
        let features =
            DenseMatrix::new(n, d, (0..n * d).map(|i| (i as f64) * 0.4 - 1.0).collect()).unwrap();
        let (g, _) = Graph::build(
            n,
            2,
            edges,
            features,
            vec![Some(0); n],
            vec![false; n],
            vec![false; n],
            vec![false; n],
        )
        .unwrap();
        g
    }

    #[test]
    fn isolated_node_with_zero_weights_is_uniform() {
        let g = graph_of(1, &[], 3);
        let a_hat = normalized_adjacency(&g);
        let mut model = Gcn::new(3, 2, 2, 4, 0.5, 0).unwrap();
        model.store.value_mut("w0").fill(0.0);
        model.store.value_mut("w1").fill(0.0);
        let (probs, _) = model.forward(&a_hat, g.features(), None).unwrap();
        assert!((probs.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((probs.get(0, 1) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn two_node_hand_evaluation() {
        let features = DenseMatrix::new(2, 1, vec![1.0, 3.0]).unwrap();
        let (g, _) = Graph::build(
            2,
            2,
            &[(0, 1)],
            features,
            vec![Some(0), Some(1)],
            vec![false; 2],
            vec![false; 2],
            vec![false; 2],
        )
        .unwrap();
        let a_hat = normalized_adjacency(&g);
        let mut model = Gcn::new(1, 2, 2, 1, 0.0, 0).unwrap();
        *model.store.value_mut("w0") = DenseMatrix::new(1, 1, vec![2.0]).unwrap();
        *model.store.value_mut("w1") = DenseMatrix::new(1, 2, vec![1.0, -0.5]).unwrap();
        let (probs, _) = model.forward(&a_hat, g.features(), None).unwrap();

        // All four A entries are 0.5, so both rows propagate the mean.
        let s = 0.5 * (1.0 + 3.0);
        let h = (s * 2.0f64).max(0.0);
        let s2 = 0.5 * (h + h);
        let (l0, l1) = (s2 * 1.0, s2 * -0.5);
        let m = l0.max(l1);
        let (e0, e1) = ((l0 - m).exp(), (l1 - m).exp());
        for v in 0..2 {
            assert!((probs.get(v, 0) - e0 / (e0 + e1)).abs() < 1e-12);
            assert!((probs.get(v, 1) - e1 / (e0 + e1)).abs() < 1e-12);
        }
    }

    #[test]
    fn dropout_rate_zero_is_all_ones() {
        let mask = dropout_mask(3, 4, 0.0, 7).unwrap();
        assert!(mask.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn dropout_keeps_about_half_at_rate_half() {
        let mask = dropout_mask(100, 100, 0.5, 7).unwrap();
        let kept = mask.values().iter().filter(|&&v| v > 0.0).count();
        let frac = kept as f64 / 10_000.0;
        assert!((frac - 0.5).abs() < 0.05, "kept fraction {frac}");
        // Inverted scaling.
        assert!(mask.values().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn evaluation_mode_ignores_dropout() {
        let g = graph_of(4, &[(0, 1), (1, 2), (2, 3)], 3);
        let a_hat = normalized_adjacency(&g);
        let model = Gcn::new(3, 2, 2, 4, 0.9, 1).unwrap();
        let (a, _) = model.forward(&a_hat, g.features(), None).unwrap();
        let (b, _) = model.forward(&a_hat, g.features(), None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn edgeless_graph_degenerates_to_per_node_mlp() {
        let g = graph_of(3, &[], 2);
        let a_hat = normalized_adjacency(&g);
        let model = Gcn::new(2, 2, 2, 4, 0.0, 3).unwrap();
        let (probs, _) = model.forward(&a_hat, g.features(), None).unwrap();

        let hidden = relu(&dense_matmul(g.features(), model.store.value("w0")).unwrap());
        let logits = dense_matmul(&hidden, model.store.value("w1")).unwrap();
        let expected = row_softmax(&logits);
        for v in 0..3 {
            for j in 0..2 {
                assert!((probs.get(v, j) - expected.get(v, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn deeper_stacks_are_supported() {
        let g = graph_of(5, &[(0, 1), (1, 2), (2, 3), (3, 4)], 3);
        let a_hat = normalized_adjacency(&g);
        let model = Gcn::new(3, 2, 5, 4, 0.0, 2).unwrap();
        let (probs, _) = model.forward(&a_hat, g.features(), None).unwrap();
        assert_eq!(probs.rows(), 5);
        for v in 0..5 {
            let sum: f64 = probs.row(v).iter().sum();
            assert!((sum - 1.0).abs() < 1e-12);
        }
    }
}
