use glaudio::data::{synth_sbm, GraphBundle};
use glaudio::decoder::{Activation, Architecture, EmbeddingPlacement};
use glaudio::graph::{build_graph, Graph, Labels, Masks};
use glaudio::train::{evaluate, train, LossKind, Pipeline, Schedule, TrainConfig};
use glaudio::{par, Error, Mat};

fn sbm_graph(seed: u64) -> Graph {
    // edge homophily ≈ 0.9 for two blocks of 50
    let b: GraphBundle = synth_sbm(100, 2, 0.2, 0.0218, 0.5, seed).unwrap();
    b.to_graph().unwrap().0
}

fn small_config() -> TrainConfig {
    TrainConfig {
        steps: 8,
        step_size: 0.25,
        hidden_dim: 8,
        learning_rate: 0.01,
        epochs: 100,
        early_stopping: None,
        ..TrainConfig::default()
    }
}

#[test]
fn sbm_two_blocks_is_learned() {
    let g = sbm_graph(1);
    let (params, report) = train(&g, &small_config()).unwrap();
    let acc = report.test_metric.unwrap();
    assert!(acc >= 0.9, "test accuracy {acc}");
    let again = evaluate(&params, &g, &small_config(), &g.masks().test).unwrap();
    assert_eq!(again, acc);
    assert_eq!(report.epochs.len(), 100);
}

#[test]
fn zero_steps_rejected() {
    let g = sbm_graph(0);
    let cfg = TrainConfig {
        steps: 0,
        ..small_config()
    };
    assert!(matches!(train(&g, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn inconsistent_stop_time_rejected() {
    let g = sbm_graph(0);
    let cfg = TrainConfig {
        stop_time: Some(3.0),
        ..small_config()
    };
    assert!(matches!(train(&g, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn loss_label_mismatch_rejected() {
    let g = sbm_graph(0);
    let cfg = TrainConfig {
        loss: LossKind::L1,
        ..small_config()
    };
    assert!(matches!(train(&g, &cfg), Err(Error::InvalidConfig(_))));
}

#[test]
fn identical_seed_gives_identical_report() {
    let g = sbm_graph(2);
    let cfg = TrainConfig {
        epochs: 15,
        dropout: 0.3,
        ..small_config()
    };
    let (p1, r1) = train(&g, &cfg).unwrap();
    let (p2, r2) = train(&g, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
    let other = TrainConfig { seed: 1, ..cfg };
    assert_ne!(train(&g, &other).unwrap().0, p1);
}

#[test]
fn sequential_fallback_matches_parallel_bitwise() {
    let g = sbm_graph(3);
    let cfg = TrainConfig {
        epochs: 5,
        dropout: 0.2,
        architecture: Architecture::Lstm,
        ..small_config()
    };
    let (p1, r1) = train(&g, &cfg).unwrap();
    par::set_parallel(false);
    let (p2, r2) = train(&g, &cfg).unwrap();
    par::set_parallel(true);
    assert_eq!(p1, p2);
    assert_eq!(r1.epochs, r2.epochs);
}

#[test]
fn cached_signal_equals_recomputed_signal() {
    let g = sbm_graph(4);
    let cfg = TrainConfig {
        epochs: 12,
        placement: EmbeddingPlacement::PostPropagation,
        dropout: 0.1,
        cache_signal: true,
        ..small_config()
    };
    let (p1, r1) = train(&g, &cfg).unwrap();
    let (p2, r2) = train(
        &g,
        &TrainConfig {
            cache_signal: false,
            ..cfg
        },
    )
    .unwrap();
    assert_eq!(p1, p2);
    assert_eq!(r1.epochs, r2.epochs);
}

#[test]
fn small_learning_rate_lowers_training_loss() {
    let g = sbm_graph(5);
    let m = g.masks();
    let no_val = g
        .with_masks(Masks {
            train: m.train.clone(),
            val: vec![false; 100],
            test: m.test.clone(),
        })
        .unwrap();
    let cfg = TrainConfig {
        learning_rate: 1e-4,
        epochs: 50,
        schedule: Schedule::Constant,
        ..small_config()
    };
    let pipe = Pipeline::new(&no_val, &cfg).unwrap();
    let initial = pipe.loss(&pipe.init_params().unwrap()).unwrap();
    let (params, _) = train(&no_val, &cfg).unwrap();
    let after = pipe.loss(&params).unwrap();
    assert!(after < initial, "{after} !< {initial}");
}

#[test]
fn mini_batches_are_deterministic() {
    let g = sbm_graph(6);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: Some(16),
        dropout: 0.2,
        ..small_config()
    };
    let (p1, r1) = train(&g, &cfg).unwrap();
    let (p2, r2) = train(&g, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(
        serde_json::to_string(&r1).unwrap(),
        serde_json::to_string(&r2).unwrap()
    );
}

#[test]
fn early_stopping_cuts_the_run_short() {
    let g = sbm_graph(7);
    let cfg = TrainConfig {
        epochs: 300,
        learning_rate: 0.05,
        early_stopping: Some(5),
        ..small_config()
    };
    let (_, report) = train(&g, &cfg).unwrap();
    assert!(report.stopped_early);
    assert!(report.epochs.len() < 300);
    assert!(report.best_epoch < report.epochs.len());
}

fn five_vertex_graph() -> Graph {
    let features = Mat::from_rows(&[
        vec![0.5, -1.0, 0.2],
        vec![1.0, 0.3, -0.7],
        vec![-0.4, 0.8, 0.1],
        vec![0.9, -0.2, 0.6],
        vec![-1.1, 0.4, -0.3],
    ])
    .unwrap();
    let labels = Labels::Classes {
        values: vec![0, 2, 1, 1, 0],
        num_classes: 3,
    };
    let masks = Masks::from_indices(5, &[0, 1, 3, 4], &[2], &[]).unwrap();
    build_graph(5, &[(0, 1), (1, 2), (2, 3), (3, 4), (1, 3)], features, labels, masks)
        .unwrap()
        .0
}

fn end_to_end_check(arch: Architecture, placement: EmbeddingPlacement, velocity: bool) {
    let g = five_vertex_graph();
    let cfg = TrainConfig {
        layers: 2,
        steps: 10,
        step_size: 0.3,
        hidden_dim: 4,
        architecture: arch,
        placement,
        activation: Activation::Tanh,
        embedding_activation: Some(Activation::Tanh),
        include_velocity: velocity,
        normalized: true,
        seed: 3,
        ..TrainConfig::default()
    };
    let pipe = Pipeline::new(&g, &cfg).unwrap();
    let mut params = pipe.init_params().unwrap();
    let (_, grads) = pipe.loss_and_gradient(&params).unwrap();
    let analytic = grads.weights.flatten();
    let eps = 1e-6;
    let mut k = 0;
    let mut worst: f64 = 0.0;
    for bi in 0..params.weights.blocks().len() {
        for j in 0..params.weights.blocks()[bi].2.len() {
            let orig = params.weights.blocks_mut()[bi][j];
            params.weights.blocks_mut()[bi][j] = orig + eps;
            let lp = pipe.loss(&params).unwrap();
            params.weights.blocks_mut()[bi][j] = orig - eps;
            let lm = pipe.loss(&params).unwrap();
            params.weights.blocks_mut()[bi][j] = orig;
            let fd = (lp - lm) / (2.0 * eps);
            let scale = fd.abs().max(analytic[k].abs()).max(1e-6);
            worst = worst.max((fd - analytic[k]).abs() / scale);
            k += 1;
        }
    }
    assert!(worst < 1e-3, "{arch:?} {placement:?}: relative error {worst}");
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    for arch in [Architecture::Rnn, Architecture::Lstm, Architecture::Cornn] {
        end_to_end_check(arch, EmbeddingPlacement::PrePropagation, false);
        end_to_end_check(arch, EmbeddingPlacement::PostPropagation, false);
    }
    end_to_end_check(Architecture::Cornn, EmbeddingPlacement::PrePropagation, true);
}

#[test]
fn regression_with_l1_loss() {
    let g = five_vertex_graph();
    let targets = Mat::column(&[0.1, -0.4, 0.3, 0.8, -0.2]);
    let (rg, _) = build_graph(
        5,
        g.edges(),
        g.features().clone(),
        Labels::Targets(targets),
        g.masks().clone(),
    )
    .unwrap();
    let cfg = TrainConfig {
        loss: LossKind::L1,
        epochs: 40,
        hidden_dim: 4,
        learning_rate: 0.01,
        early_stopping: None,
        ..TrainConfig::default()
    };
    let (_, report) = train(&rg, &cfg).unwrap();
    let first = report.epochs[0].train_loss;
    let last = report.epochs.last().unwrap().train_loss;
    assert!(last < first);
}
