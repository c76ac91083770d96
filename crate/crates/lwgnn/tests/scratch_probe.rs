//! Temporary probe (not part of the deliverable test suite).

use lwgnn::graph::{generate_synthetic, split_nodes, SyntheticSpec};
use lwgnn::labelwise::{build_class_adjacency, EmptyClassFallback, LwGnn};
use lwgnn::numerics::{masked_cross_entropy, Optimizer};
use lwgnn::pseudo::{assign_labels, LabelAssignment, LabelSource, PseudoScope};
use lwgnn::trainer::{accuracy, run_ablation, TrainConfig, Variant};

fn bench_graph(h: f64, seed: u64) -> lwgnn::graph::Graph {
    let spec = SyntheticSpec {
        num_nodes: 1000,
        num_classes: 5,
        target_homophily: h,
        avg_degree: 10.0,
        feature_dim: 16,
        class_center_separation: 3.0,
        noise_scale: 1.0,
        seed,
    };
    let g = generate_synthetic(&spec).unwrap();
    let (train_m, val_m, test_m) = split_nodes(&g, 20, 200, seed).unwrap();
    g.with_masks(train_m, val_m, test_m).unwrap()
}

// Train LwGnn alone with explicit control, reporting the trajectory.
fn train_lw_manual(
    g: &lwgnn::graph::Graph,
    assignment: &LabelAssignment,
    steps: usize,
    lr: f64,
    p: usize,
    k: usize,
    dropout: f64,
    seed: u64,
) {
    use rand::SeedableRng;
    let class_adj = build_class_adjacency(g, assignment).unwrap();
    let labels: Vec<usize> = g.labels().iter().map(|l| l.unwrap()).collect();
    let mut model = LwGnn::new(
        g.feature_dim(),
        g.num_classes(),
        k,
        p,
        EmptyClassFallback::Zero,
        dropout,
        seed,
    )
    .unwrap();
    let mut dropout_rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    for step in 0..steps {
        let dseed = rand::RngCore::next_u64(&mut dropout_rng);
        let (probs, acts) = model
            .forward(g.features(), &class_adj, (dropout > 0.0).then_some(dseed))
            .unwrap();
        if step % 100 == 0 || step == steps - 1 {
            let (ep, _) = model.forward(g.features(), &class_adj, None).unwrap();
            let tr = accuracy(&ep, g.labels(), g.train_mask()).unwrap();
            let va = accuracy(&ep, g.labels(), g.val_mask()).unwrap();
            let te = accuracy(&ep, g.labels(), g.test_mask()).unwrap();
            let (loss, _) = masked_cross_entropy(&ep, &labels, g.train_mask()).unwrap();
            println!("  step {step}: loss={loss:.4} train={tr:.3} val={va:.3} test={te:.3}");
        }
        let (_, grad) = masked_cross_entropy(&probs, &labels, g.train_mask()).unwrap();
        model
            .backward(g.features(), &class_adj, &acts, &grad)
            .unwrap();
        model.store.step(Optimizer::Adam, lr);
    }
}

#[test]
#[ignore]
fn probe_labelwise_only() {
    let g = bench_graph(0.1, 0);

    // MLP pseudo labels as in the pipeline.
    let cfg = TrainConfig::default();
    let mlp = run_ablation(&g, &cfg, Variant::MlpOnly).unwrap();
    println!("MLP test acc: {:.3}", mlp.report.combined.test);

    let mlp_model = match mlp.models {
        lwgnn::trainer::Models::MlpOnly { model } => model,
        _ => unreachable!(),
    };
    let probs = mlp_model.forward(g.features()).unwrap();
    let assignment = assign_labels(&g, &probs, PseudoScope::TrainAndVal).unwrap();
    let correct = (0..g.num_nodes())
        .filter(|&v| assignment.class_of(v) == g.label(v).unwrap())
        .count();
    println!("assignment accuracy: {:.3}", correct as f64 / 1000.0);

    println!("LW mlp-pseudo p=64 K=2 dropout=0.0:");
    train_lw_manual(&g, &assignment, 600, 0.01, 64, 2, 0.0, 42);
    println!("LW mlp-pseudo p=64 K=2 dropout=0.5:");
    train_lw_manual(&g, &assignment, 600, 0.01, 64, 2, 0.5, 42);
    println!("LW mlp-pseudo p=64 K=2 dropout=0.7:");
    train_lw_manual(&g, &assignment, 600, 0.01, 64, 2, 0.7, 42);
    println!("LW perfect labels K=2 dropout=0.5:");
    let perfect = LabelAssignment::from_parts(
        g.labels().iter().map(|l| l.unwrap()).collect(),
        vec![LabelSource::GroundTruth; g.num_nodes()],
    );
    train_lw_manual(&g, &perfect, 600, 0.01, 64, 2, 0.5, 42);
    println!("LW mlp-pseudo K=6 dropout=0.5:");
    train_lw_manual(&g, &assignment, 600, 0.01, 64, 6, 0.5, 42);
}
