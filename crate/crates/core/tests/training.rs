mod common;

use resnesat::data::{make_folds, NormStats, PhantomConfig, SplitMode, Task};
use resnesat::layers::Layer;
use resnesat::net::{Checkpoint, Network, NetworkConfig};
use resnesat::train::{cross_validate, evaluate, train_network, CvOptions, Sgd, TrainingConfig};

fn small_phantoms() -> PhantomConfig {
    PhantomConfig {
        none: 12,
        primary: 12,
        secondary: 12,
        size: 32,
        seed: 5,
        images_per_patient: 3,
    }
}

fn quick_config(lr: f64) -> TrainingConfig {
    TrainingConfig {
        lr,
        epochs: 2,
        batch_size: 8,
        seed: 21,
        ..TrainingConfig::for_task(Task::Presence)
    }
}

#[test]
fn metric_suite_matches_counting_oracle() {
    for seed in 0..5 {
        let gap = common::metric_oracle(1000, seed).unwrap();
        assert!(gap < 1e-12);
    }
}

#[test]
fn zero_learning_rate_leaves_trainable_weights_untouched() {
    let data = common::phantom_set(Task::Presence, &small_phantoms());
    let mut net = Network::<f32>::new(NetworkConfig::tiny(), 2).unwrap();
    let before = net.clone();
    let train: Vec<usize> = (0..data.len()).collect();
    let stats = NormStats::compute(&data.images, &train).unwrap();
    let mut sgd = Sgd::new(0.9, 1e-4);
    let log = train_network(&mut net, &mut sgd, &data, &train, &stats, &quick_config(0.0), |_| {}).unwrap();
    assert_eq!(log.len(), 2);
    assert!(log.iter().all(|e| e.lr == 0.0));
    let mut trainable_before = Vec::new();
    before.visit("", &mut |n, p| {
        if p.trainable {
            trainable_before.push((n.to_string(), p.value.clone()));
        }
    });
    let mut idx = 0;
    net.visit("", &mut |n, p| {
        if p.trainable {
            assert_eq!(
                (n, &p.value),
                (trainable_before[idx].0.as_str(), &trainable_before[idx].1)
            );
            idx += 1;
        }
    });
}

#[test]
fn cross_validation_is_reproducible() {
    let data = common::phantom_set(Task::Source, &small_phantoms());
    let patients = vec![String::new(); data.len()];
    let split = make_folds(&data.labels, &patients, 3, SplitMode::ImageStratified, 4).unwrap();
    let cfg = quick_config(1e-3);
    let a = cross_validate(&NetworkConfig::tiny(), &data, &split, &cfg, CvOptions::default()).unwrap();
    let b = cross_validate(
        &NetworkConfig::tiny(),
        &data,
        &split,
        &cfg,
        CvOptions {
            parallel_folds: 3,
            ..CvOptions::default()
        },
    )
    .unwrap();
    assert_eq!(a.summary, b.summary);
    for (fa, fb) in a.folds.iter().zip(&b.folds) {
        assert_eq!(fa.checkpoint.to_bytes(), fb.checkpoint.to_bytes());
        assert_eq!(fa.log, fb.log);
        assert_eq!(fa.confusion.total() as usize, split.test_indices(fa.fold).len());
    }
}

#[test]
fn checkpoint_restores_predictions() {
    let data = common::phantom_set(Task::Presence, &small_phantoms());
    let patients = vec![String::new(); data.len()];
    let split = make_folds(&data.labels, &patients, 3, SplitMode::ImageStratified, 4).unwrap();
    let report = cross_validate(
        &NetworkConfig::tiny(),
        &data,
        &split,
        &quick_config(1e-3),
        CvOptions::default(),
    )
    .unwrap();
    let fold = &report.folds[1];
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fold1.ckpt");
    fold.checkpoint.save(&path).unwrap();
    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded.velocities.len(), fold.checkpoint.velocities.len());
    let mut net: Network<f32> = loaded.to_network().unwrap();
    let stats = resnesat::train::stats_from_metadata(&loaded.metadata).unwrap();
    let eval = evaluate(&mut net, &data, split.test_indices(1), &stats, 8).unwrap();
    assert_eq!(eval.confusion, fold.confusion);
    assert!(eval.positive_prob.iter().all(|p| *p > 0.0 && *p < 1.0));
}

#[test]
fn divergence_is_reported() {
    let data = common::phantom_set(Task::Presence, &small_phantoms());
    let mut net = Network::<f32>::new(NetworkConfig::tiny(), 2).unwrap();
    let train: Vec<usize> = (0..data.len()).collect();
    let stats = NormStats::compute(&data.images, &train).unwrap();
    let mut sgd = Sgd::new(0.9, 0.0);
    let cfg = TrainingConfig {
        epochs: 3,
        ..quick_config(1e300)
    };
    let err = train_network(&mut net, &mut sgd, &data, &train, &stats, &cfg, |_| {}).unwrap_err();
    assert!(matches!(err, resnesat::Error::Diverged { .. }), "{err}");
}
