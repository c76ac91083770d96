//! Property tests for the algebraic invariants of the kernels and the graph
//! file round-trip.

use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use lwgnn::graph::{load_graph, save_graph, Graph};
use lwgnn::numerics::{
    dense_matmul, masked_cross_entropy, row_softmax, DenseMatrix, SparseMatrix,
};

fn dense_from_cells(rows: usize, cols: usize, cells: &[Option<f64>]) -> SparseMatrix {
    let mut entries = vec![Vec::new(); rows];
    for (idx, cell) in cells.iter().enumerate() {
        if let Some(v) = cell {
            entries[idx / cols].push((idx % cols, *v));
        }
    }
    SparseMatrix::from_rows(rows, cols, &entries).unwrap()
}

proptest! {
    #[test]
    fn sparse_product_matches_densified_product(
        rows in 1usize..6,
        inner in 1usize..6,
        cols in 1usize..5,
        cells in prop::collection::vec(prop::option::of(-10.0f64..10.0), 36),
        dense_values in prop::collection::vec(-10.0f64..10.0, 30),
    ) {
        let cells = &cells[..rows * inner];
        let sparse = dense_from_cells(rows, inner, cells);
        let b = DenseMatrix::new(
            inner,
            cols,
            dense_values[..inner * cols].to_vec(),
        ).unwrap();
        let via_sparse = sparse.matmul_dense(&b).unwrap();
        let via_dense = dense_matmul(&sparse.to_dense(), &b).unwrap();
        for (x, y) in via_sparse.values().iter().zip(via_dense.values()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_rows_sum_to_one_and_shift_is_invariant(
        rows in 1usize..6,
        cols in 1usize..6,
        values in prop::collection::vec(-50.0f64..50.0, 36),
        shift in -100.0f64..100.0,
    ) {
        let x = DenseMatrix::new(rows, cols, values[..rows * cols].to_vec()).unwrap();
        let y = row_softmax(&x);
        for i in 0..rows {
            let sum: f64 = y.row(i).iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        let mut shifted = x.clone();
        for v in shifted.values_mut() {
            *v += shift;
        }
        let y2 = row_softmax(&shifted);
        for (a, b) in y.values().iter().zip(y2.values()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_is_permutation_equivariant(
        rows in 2usize..7,
        cols in 2usize..5,
        logits in prop::collection::vec(-5.0f64..5.0, 42),
        label_picks in prop::collection::vec(0usize..100, 7),
        mask_picks in prop::collection::vec(any::<bool>(), 7),
        perm_seed in any::<u64>(),
    ) {
        let probs = row_softmax(
            &DenseMatrix::new(rows, cols, logits[..rows * cols].to_vec()).unwrap(),
        );
        let labels: Vec<usize> = label_picks[..rows].iter().map(|p| p % cols).collect();
        let mut mask = mask_picks[..rows].to_vec();
        if mask.iter().all(|m| !m) {
            mask[0] = true;
        }

        let mut order: Vec<usize> = (0..rows).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));

        let mut perm_probs = DenseMatrix::zeros(rows, cols);
        let mut perm_labels = vec![0usize; rows];
        let mut perm_mask = vec![false; rows];
        for (new, &old) in order.iter().enumerate() {
            perm_probs.row_mut(new).copy_from_slice(probs.row(old));
            perm_labels[new] = labels[old];
            perm_mask[new] = mask[old];
        }

        let (loss_a, grad_a) = masked_cross_entropy(&probs, &labels, &mask).unwrap();
        let (loss_b, grad_b) = masked_cross_entropy(&perm_probs, &perm_labels, &perm_mask).unwrap();
        prop_assert!((loss_a - loss_b).abs() < 1e-12);
        for (new, &old) in order.iter().enumerate() {
            for j in 0..cols {
                prop_assert!((grad_a.get(old, j) - grad_b.get(new, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn graph_files_round_trip(
        n in 1usize..12,
        c in 1usize..4,
        edge_picks in prop::collection::vec((0usize..12, 0usize..12), 0..20),
        label_picks in prop::collection::vec(0usize..100, 12),
        mask_picks in prop::collection::vec(0u8..4, 12),
        feature_values in prop::collection::vec(-100.0f64..100.0, 36),
    ) {
        let d = 3;
        let edges: Vec<(usize, usize)> = edge_picks
            .iter()
            .map(|&(a, b)| (a % n, b % n))
            .collect();
        let labels: Vec<Option<usize>> =
            label_picks[..n].iter().map(|p| Some(p % c)).collect();
        let mut train = vec![false; n];
        let mut val = vec![false; n];
        let mut test = vec![false; n];
        for v in 0..n {
            match mask_picks[v] {
                1 => train[v] = true,
                2 => val[v] = true,
                3 => test[v] = true,
                _ => {}
            }
        }
        let features = DenseMatrix::new(n, d, feature_values[..n * d].to_vec()).unwrap();
        let (graph, _) = Graph::build(n, c, &edges, features, labels, train, val, test).unwrap();

        let file = tempfile::NamedTempFile::new().unwrap();
        save_graph(&graph, file.path()).unwrap();
        let (reloaded, _) = load_graph(file.path()).unwrap();
        prop_assert_eq!(graph, reloaded);
    }
}
