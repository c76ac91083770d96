//! End-to-end gradient verification: every differentiable kernel and every
//! model loss checked against central finite differences, across many seeds.
//!
//! Each check builds a deterministic random instance, registers the relevant
//! tensors as parameters, and hands `grad_check` a closure that runs the
//! full forward/backward path. The suite backs both the `gradcheck` CLI
//! command and the acceptance tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gcn::Gcn;
use crate::graph::{normalized_adjacency, Graph};
use crate::labelwise::{build_class_adjacency, ClassAdjacency, EmptyClassFallback, LwGnn};
use crate::numerics::{
    dense_matmul, dense_matmul_backward, grad_check, masked_cross_entropy, maxpool_stack,
    maxpool_stack_backward, relu, relu_backward, row_softmax, row_softmax_backward, DenseMatrix,
    GradCheckConfig, ParameterStore, SparseMatrix,
};
use crate::pseudo::{LabelAssignment, LabelSource, MlpPredictor};
use crate::trainer::{combine_predictions, SelectionWeights};

#[derive(Debug, Clone)]
pub struct SuiteCheck {
    pub name: String,
    pub passed: bool,
    pub max_rel_error: f64,
    pub entries_checked: usize,
    pub seeds: u64,
}

#[derive(Debug, Clone)]
pub struct GradSuiteOutcome {
    pub checks: Vec<SuiteCheck>,
    pub passed: bool,
}

/// Uniform away from zero: |value| in [0.1, 1.0], so ReLU kinks sit well
/// clear of the finite-difference step.
fn sample_off_kink(rng: &mut ChaCha8Rng) -> f64 {
    let magnitude = rng.random_range(0.1..1.0);
    if rng.random::<bool>() {
        magnitude
    } else {
        -magnitude
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix {
    let values = (0..rows * cols).map(|_| sample_off_kink(rng)).collect();
    DenseMatrix::new(rows, cols, values).expect("sized")
}

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    loop {
        let mask: Vec<bool> = (0..len).map(|_| rng.random::<bool>()).collect();
        if mask.iter().any(|&m| m) {
            return mask;
        }
    }
}

fn random_labels(rng: &mut ChaCha8Rng, len: usize, classes: usize) -> Vec<usize> {
    (0..len).map(|_| rng.random_range(0..classes)).collect()
}

/// Small random graph with labels everywhere and a nonempty train mask.
fn random_small_graph(rng: &mut ChaCha8Rng) -> (Graph, Vec<usize>, Vec<bool>) {
    let n = rng.random_range(4..=6);
    let c = rng.random_range(2..=3);
    let d = rng.random_range(2..=4);
    let mut edges = Vec::new();
    for _ in 0..n + 2 {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a != b {
            edges.push((a, b));
        }
    }
    let labels = random_labels(rng, n, c);
    let features = random_matrix(rng, n, d);
    let (graph, _) = Graph::build(
        n,
        c,
        &edges,
        features,
        labels.iter().map(|&y| Some(y)).collect(),
        vec![false; n],
        vec![false; n],
        vec![false; n],
    )
    .expect("valid random graph");
    let mask = random_mask(rng, n);
    (graph, labels, mask)
}

fn assignment_from(labels: &[usize]) -> LabelAssignment {
    LabelAssignment::from_parts(labels.to_vec(), vec![LabelSource::Predicted; labels.len()])
}

struct CheckRunner {
    tolerance: f64,
    num_seeds: u64,
    inject_fault: bool,
    checks: Vec<SuiteCheck>,
}

impl CheckRunner {
    fn run<F>(&mut self, name: &str, mut build_and_check: F) -> Result<()>
    where
        F: FnMut(u64, &GradCheckConfig) -> Result<crate::numerics::GradCheckReport>,
    {
        let mut worst = 0.0f64;
        let mut entries = 0usize;
        let mut passed = true;
        for seed in 0..self.num_seeds {
            let cfg = GradCheckConfig {
                tolerance: self.tolerance,
                seed,
                ..Default::default()
            };
            let report = build_and_check(seed, &cfg)?;
            entries += report.entries_checked;
            if report.max_rel_error > worst {
                worst = report.max_rel_error;
            }
            passed &= report.passed;
        }
        self.checks.push(SuiteCheck {
            name: name.to_string(),
            passed,
            max_rel_error: worst,
            entries_checked: entries,
            seeds: self.num_seeds,
        });
        Ok(())
    }
}

/// Run the whole suite. `inject_fault` deliberately corrupts one analytic
/// gradient entry in the first check, which must then fail; it exists so the
/// failure path of the CLI wrapper stays testable.
pub fn run_gradient_suite(
    tolerance: f64,
    num_seeds: u64,
    inject_fault: bool,
) -> Result<GradSuiteOutcome> {
    let mut runner = CheckRunner {
        tolerance,
        num_seeds,
        inject_fault,
        checks: Vec::new(),
    };

    let fault = runner.inject_fault;
    runner.run("dense_matmul", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(101));
        let (r, k, c) = (
            rng.random_range(2..=7),
            rng.random_range(2..=5),
            rng.random_range(2..=5),
        );
        let upstream = random_matrix(&mut rng, r, c);
        let mut store = ParameterStore::new();
        store.insert("a", random_matrix(&mut rng, r, k));
        store.insert("b", random_matrix(&mut rng, k, c));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let a = store.value("a").clone();
                let b = store.value("b").clone();
                let out = dense_matmul(&a, &b)?;
                let loss: f64 = out
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(o, u)| o * u)
                    .sum();
                let (mut g_a, g_b) = dense_matmul_backward(&upstream, &a, &b)?;
                if fault {
                    let doubled = g_a.values()[0];
                    g_a.values_mut()[0] = doubled * 2.0;
                }
                store.add_gradient("a", &g_a)?;
                store.add_gradient("b", &g_b)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("sparse_dense_matmul", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(202));
        let (r, k, c) = (
            rng.random_range(2..=6),
            rng.random_range(2..=5),
            rng.random_range(2..=4),
        );
        let mut rows = vec![Vec::new(); r];
        for (i, row) in rows.iter_mut().enumerate() {
            for j in 0..k {
                if rng.random::<f64>() < 0.5 || (i + j) % k == 0 {
                    row.push((j, sample_off_kink(&mut rng)));
                }
            }
        }
        let sparse = SparseMatrix::from_rows(r, k, &rows)?;
        let upstream = random_matrix(&mut rng, r, c);
        let mut store = ParameterStore::new();
        store.insert("b", random_matrix(&mut rng, k, c));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let b = store.value("b").clone();
                let out = sparse.matmul_dense(&b)?;
                let loss: f64 = out
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(o, u)| o * u)
                    .sum();
                store.add_gradient("b", &sparse.transpose_matmul_dense(&upstream)?)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("relu", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(303));
        let (r, c) = (rng.random_range(2..=7), rng.random_range(2..=5));
        let upstream = random_matrix(&mut rng, r, c);
        let mut store = ParameterStore::new();
        store.insert("x", random_matrix(&mut rng, r, c));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let x = store.value("x").clone();
                let out = relu(&x);
                let loss: f64 = out
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(o, u)| o * u)
                    .sum();
                store.add_gradient("x", &relu_backward(&upstream, &x)?)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("row_softmax", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(404));
        let (r, c) = (rng.random_range(2..=7), rng.random_range(2..=5));
        let upstream = random_matrix(&mut rng, r, c);
        let mut store = ParameterStore::new();
        store.insert("x", random_matrix(&mut rng, r, c));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let x = store.value("x").clone();
                let y = row_softmax(&x);
                let loss: f64 = y
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(o, u)| o * u)
                    .sum();
                store.add_gradient("x", &row_softmax_backward(&upstream, &y)?)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("masked_cross_entropy", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(505));
        let (r, c) = (rng.random_range(2..=7), rng.random_range(2..=5));
        let labels = random_labels(&mut rng, r, c);
        let mask = random_mask(&mut rng, r);
        let mut store = ParameterStore::new();
        store.insert("logits", random_matrix(&mut rng, r, c));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let logits = store.value("logits").clone();
                let probs = row_softmax(&logits);
                let (loss, g_probs) = masked_cross_entropy(&probs, &labels, &mask)?;
                store.add_gradient("logits", &row_softmax_backward(&g_probs, &probs)?)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("maxpool_stack", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(606));
        let (r, c) = (rng.random_range(2..=5), rng.random_range(2..=5));
        let layers = rng.random_range(2..=3);
        let upstream = random_matrix(&mut rng, r, c);
        let mut store = ParameterStore::new();
        // Grid values plus a per-layer offset keep cross-layer gaps far
        // above the finite-difference step, so the argmax never flips.
        for l in 0..layers {
            let values: Vec<f64> = (0..r * c)
                .map(|_| rng.random_range(-10..=10) as f64 * 0.1 + l as f64 * 0.033)
                .collect();
            store.insert(&format!("h{l}"), DenseMatrix::new(r, c, values).expect("sized"));
        }
        grad_check(
            &mut store,
            move |store: &mut ParameterStore| {
                let stack: Vec<DenseMatrix> =
                    (0..layers).map(|l| store.value(&format!("h{l}")).clone()).collect();
                let (out, argmax) = maxpool_stack(&stack)?;
                let loss: f64 = out
                    .values()
                    .iter()
                    .zip(upstream.values())
                    .map(|(o, u)| o * u)
                    .sum();
                for (l, g) in maxpool_stack_backward(&upstream, &argmax, layers)
                    .iter()
                    .enumerate()
                {
                    store.add_gradient(&format!("h{l}"), g)?;
                }
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("mlp", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(707));
        let (n, d, c) = (
            rng.random_range(3..=6),
            rng.random_range(2..=4),
            rng.random_range(2..=3),
        );
        let features = random_matrix(&mut rng, n, d);
        let labels = random_labels(&mut rng, n, c);
        let mask = random_mask(&mut rng, n);
        let mut model = MlpPredictor::new(d, c, 5, seed.wrapping_add(708));
        let mut store = std::mem::take(&mut model.store);
        let report = grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                model.store = store.clone();
                let (probs, cache) = model.forward_cached(&features)?;
                let (loss, g_probs) = masked_cross_entropy(&probs, &labels, &mask)?;
                model.backward(&features, &cache, &g_probs)?;
                for name in ["w1", "b1", "w2", "b2"] {
                    store.add_gradient(name, model.store.gradient(name))?;
                }
                Ok(loss)
            },
            cfg,
        )?;
        Ok(report)
    })?;

    for k in 1..=3usize {
        let name = format!("labelwise_k{k}");
        runner.run(&name, |seed, cfg| {
            labelwise_check(seed, cfg, k, EmptyClassFallback::Zero)
        })?;
    }
    runner.run("labelwise_class_average", |seed, cfg| {
        labelwise_check(seed, cfg, 2, EmptyClassFallback::ClassAverage)
    })?;

    runner.run("gcn", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(909));
        let (graph, labels, mask) = random_small_graph(&mut rng);
        let a_hat = normalized_adjacency(&graph);
        let mut model = Gcn::new(
            graph.feature_dim(),
            graph.num_classes(),
            2,
            4,
            0.0,
            seed.wrapping_add(910),
        )?;
        let names: Vec<String> = model.store.names().map(str::to_string).collect();
        let mut store = std::mem::take(&mut model.store);
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                model.store = store.clone();
                let (probs, cache) = model.forward(&a_hat, graph.features(), None)?;
                let (loss, g_probs) = masked_cross_entropy(&probs, &labels, &mask)?;
                model.backward(&a_hat, &cache, &g_probs)?;
                for name in &names {
                    store.add_gradient(name, model.store.gradient(name))?;
                }
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("selector_phi", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1111));
        let (n, c) = (rng.random_range(3..=6), rng.random_range(2..=3));
        let y_c = row_softmax(&random_matrix(&mut rng, n, c));
        let y_g = row_softmax(&random_matrix(&mut rng, n, c));
        let labels = random_labels(&mut rng, n, c);
        let mask = random_mask(&mut rng, n);
        let mut store = ParameterStore::new();
        store.insert("phi", random_matrix(&mut rng, 1, 2));
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                let phi = store.value("phi");
                let weights = SelectionWeights {
                    phi1: phi.get(0, 0),
                    phi2: phi.get(0, 1),
                };
                let (w1, w2) = weights.mixture();
                let combined = combine_predictions(&y_c, &y_g, &weights)?;
                let (loss, grad) = masked_cross_entropy(&combined, &labels, &mask)?;
                let a1: f64 = grad
                    .values()
                    .iter()
                    .zip(y_c.values())
                    .map(|(g, p)| g * p)
                    .sum();
                let a2: f64 = grad
                    .values()
                    .iter()
                    .zip(y_g.values())
                    .map(|(g, p)| g * p)
                    .sum();
                let upstream = DenseMatrix::new(1, 2, vec![a1, a2])?;
                let mixture = DenseMatrix::new(1, 2, vec![w1, w2])?;
                store.add_gradient("phi", &row_softmax_backward(&upstream, &mixture)?)?;
                Ok(loss)
            },
            cfg,
        )
    })?;

    runner.run("selector_joint_branches", |seed, cfg| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1212));
        let (graph, labels, mask) = random_small_graph(&mut rng);
        let assignment = assignment_from(
            &graph
                .labels()
                .iter()
                .map(|l| l.unwrap())
                .collect::<Vec<_>>(),
        );
        let class_adj = build_class_adjacency(&graph, &assignment)?;
        let a_hat = normalized_adjacency(&graph);
        let weights = SelectionWeights {
            phi1: sample_off_kink(&mut rng),
            phi2: sample_off_kink(&mut rng),
        };
        let mut lw = LwGnn::new(
            graph.feature_dim(),
            graph.num_classes(),
            2,
            3,
            EmptyClassFallback::Zero,
            0.0,
            seed.wrapping_add(1213),
        )?;
        let mut gcn = Gcn::new(
            graph.feature_dim(),
            graph.num_classes(),
            2,
            4,
            0.0,
            seed.wrapping_add(1214),
        )?;
        let lw_names: Vec<String> = lw.store.names().map(str::to_string).collect();
        let gcn_names: Vec<String> = gcn.store.names().map(str::to_string).collect();
        let mut store = ParameterStore::new();
        for name in &lw_names {
            store.insert(&format!("c.{name}"), lw.store.value(name).clone());
        }
        for name in &gcn_names {
            store.insert(&format!("g.{name}"), gcn.store.value(name).clone());
        }
        grad_check(
            &mut store,
            |store: &mut ParameterStore| {
                for name in &lw_names {
                    *lw.store.value_mut(name) = store.value(&format!("c.{name}")).clone();
                }
                for name in &gcn_names {
                    *gcn.store.value_mut(name) = store.value(&format!("g.{name}")).clone();
                }
                lw.store.zero_gradients();
                gcn.store.zero_gradients();
                let (y_c, acts) = lw.forward(graph.features(), &class_adj, None)?;
                let (y_g, cache) = gcn.forward(&a_hat, graph.features(), None)?;
                let combined = combine_predictions(&y_c, &y_g, &weights)?;
                let (loss, g) = masked_cross_entropy(&combined, &labels, &mask)?;
                let (w1, w2) = weights.mixture();
                let mut g_c = g.clone();
                for v in g_c.values_mut() {
                    *v *= w1;
                }
                let mut g_g = g;
                for v in g_g.values_mut() {
                    *v *= w2;
                }
                lw.backward(graph.features(), &class_adj, &acts, &g_c)?;
                gcn.backward(&a_hat, &cache, &g_g)?;
                for name in &lw_names {
                    store.add_gradient(&format!("c.{name}"), lw.store.gradient(name))?;
                }
                for name in &gcn_names {
                    store.add_gradient(&format!("g.{name}"), gcn.store.gradient(name))?;
                }
                Ok(loss)
            },
            cfg,
        )
    })?;

    let passed = runner.checks.iter().all(|c| c.passed);
    Ok(GradSuiteOutcome {
        checks: runner.checks,
        passed,
    })
}

fn labelwise_check(
    seed: u64,
    cfg: &GradCheckConfig,
    layers: usize,
    fallback: EmptyClassFallback,
) -> Result<crate::numerics::GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(808 + layers as u64 * 31));
    let (graph, labels, mask) = random_small_graph(&mut rng);
    // Random assignment, independent of the true labels.
    let assignment = assignment_from(&random_labels(&mut rng, graph.num_nodes(), graph.num_classes()));
    let class_adj: ClassAdjacency = build_class_adjacency(&graph, &assignment)?;
    let mut model = LwGnn::new(
        graph.feature_dim(),
        graph.num_classes(),
        layers,
        3,
        fallback,
        0.0,
        seed.wrapping_add(809),
    )?;
    let names: Vec<String> = model.store.names().map(str::to_string).collect();
    let mut store = std::mem::take(&mut model.store);
    grad_check(
        &mut store,
        |store: &mut ParameterStore| {
            model.store = store.clone();
            let (probs, acts) = model.forward(graph.features(), &class_adj, None)?;
            let (loss, g_probs) = masked_cross_entropy(&probs, &labels, &mask)?;
            model.backward(graph.features(), &class_adj, &acts, &g_probs)?;
            for name in &names {
                store.add_gradient(name, model.store.gradient(name))?;
            }
            Ok(loss)
        },
        cfg,
    )
}
