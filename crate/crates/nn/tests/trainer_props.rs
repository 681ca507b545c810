use std::collections::BTreeSet;

use fusestrata_core::volio::{synth_dataset, Dataset, SynthConfig};
use fusestrata_nn::checkpoint;
use fusestrata_nn::optim::OptimConfig;
use fusestrata_nn::trainer::{
    cross_validate, extract_embeddings, increasing_windows, kfold_split, reconstruct, reconstructors, train, CvConfig,
    IdentityReconstructor, TrainConfig,
};
use fusestrata_nn::{FuseModel, ModelConfig, NnError};
use proptest::prelude::*;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        input_dims: [8, 8, 8],
        depth: 2,
        embedding_channels: 4,
        ..ModelConfig::default()
    }
}

fn tiny_data(n: usize) -> Dataset {
    synth_dataset(&SynthConfig {
        n_subjects: n,
        dims: [8, 8, 8],
        depth: 2,
        n_groups: n.min(2),
        ..SynthConfig::default()
    })
    .unwrap()
    .data
}

fn tiny_train(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig {
        epochs,
        optimizer: OptimConfig {
            lr,
            ..OptimConfig::default()
        },
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_learning_rate_changes_nothing() {
    let data = tiny_data(1);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let before = model.params.clone();
    let cfg = TrainConfig {
        recalibrate_bn: false,
        ..tiny_train(5, 0.0)
    };
    let log = train(&mut model, &data, &cfg).unwrap();
    for ((_, a), (_, b)) in before.iter().zip(model.params.iter()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
    assert_eq!(log.steps, 5);
    // with one subject and dropout reseeded per step only the masks vary,
    // so compare against a dropout-free run for a strictly flat curve
    let mut flat = FuseModel::<f32>::new(ModelConfig {
        dropout_rate: 0.0,
        ..tiny_model()
    })
    .unwrap();
    let log = train(&mut flat, &data, &cfg).unwrap();
    assert!(log.epoch_loss.windows(2).all(|w| w[0] == w[1]), "{:?}", log.epoch_loss);
}

#[test]
fn same_seed_same_loss_curve_and_params() {
    let data = tiny_data(3);
    let run = || {
        let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
        let log = train(&mut model, &data, &tiny_train(3, 1e-3)).unwrap();
        (log.epoch_loss, checkpoint::encode(&model))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.0.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(a.1, b.1);
}

#[test]
fn training_lowers_the_loss() {
    let data = tiny_data(1);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let log = train(&mut model, &data, &tiny_train(60, 1e-3)).unwrap();
    assert!(log.epoch_loss[59] < log.epoch_loss[0]);
    assert_eq!(log.epoch_loss.len(), 60);
}

#[test]
fn invalid_train_configs() {
    let data = tiny_data(1);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    for cfg in [
        TrainConfig { epochs: 0, ..TrainConfig::default() },
        TrainConfig { batch_size: 4, ..TrainConfig::default() },
        tiny_train(1, f64::NAN),
    ] {
        assert!(matches!(train(&mut model, &data, &cfg), Err(NnError::Config(_))));
    }
    let wrong = synth_dataset(&SynthConfig {
        n_subjects: 1,
        dims: [16, 8, 8],
        depth: 2,
        n_groups: 1,
        ..SynthConfig::default()
    })
    .unwrap()
    .data;
    assert!(train(&mut model, &wrong, &tiny_train(1, 1e-3)).is_err());
    let unknown = TrainConfig {
        optimizer: OptimConfig {
            kind: "rmsprop".into(),
            ..OptimConfig::default()
        },
        ..tiny_train(1, 1e-3)
    };
    assert!(matches!(train(&mut model, &data, &unknown), Err(NnError::UnknownStrategy(_))));
}

#[test]
fn sgd_is_selectable() {
    let data = tiny_data(1);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let cfg = TrainConfig {
        optimizer: OptimConfig {
            kind: "sgd".into(),
            lr: 0.05,
            momentum: 0.9,
            ..OptimConfig::default()
        },
        ..tiny_train(10, 0.05)
    };
    let log = train(&mut model, &data, &cfg).unwrap();
    assert!(log.epoch_loss.iter().all(|v| v.is_finite()));
}

#[test]
fn nan_loss_reports_step_and_block() {
    let data = tiny_data(2);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let id = model.params.find("m2.enc2.conv.conv.w").unwrap();
    model.params.value_mut(id).data[0] = f32::NAN;
    match train(&mut model, &data, &tiny_train(2, 1e-3)) {
        Err(NnError::NonFiniteLoss { step, block }) => {
            assert_eq!(step, 0);
            assert!(block.starts_with("m2.enc2.conv"), "{block}");
        }
        other => panic!("expected a non-finite loss, got {other:?}"),
    }
}

#[test]
fn loss_window_flags() {
    let falling: Vec<f64> = (0..100).map(|i| 1.0 / (1.0 + i as f64)).collect();
    assert!(increasing_windows(&falling, 50, 10).is_empty());
    let mut bumped = falling.clone();
    bumped[70] = 5.0;
    assert_eq!(increasing_windows(&bumped, 50, 10), vec![21]);
    assert!(increasing_windows(&falling[..30], 50, 10).is_empty());
}

#[test]
fn kfold_974_by_10() {
    let folds = kfold_split(974, 10, 1).unwrap();
    let mut sizes: Vec<usize> = folds.iter().map(|f| f.test.len()).collect();
    sizes.sort_unstable();
    assert_eq!(sizes, [vec![97; 6], vec![98; 4]].concat());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn kfold_partitions(n in 2usize..200, k in 2usize..12, seed in any::<u64>()) {
        prop_assume!(n >= k);
        let folds = kfold_split(n, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = BTreeSet::new();
        for f in &folds {
            for &i in &f.test {
                prop_assert!(seen.insert(i));
            }
            let train: BTreeSet<_> = f.train.iter().copied().collect();
            prop_assert_eq!(train.len() + f.test.len(), n);
            prop_assert!(f.test.iter().all(|i| !train.contains(i)));
        }
        prop_assert_eq!(seen.len(), n);
        let (lo, hi) = folds.iter().fold((usize::MAX, 0), |(a, b), f| (a.min(f.test.len()), b.max(f.test.len())));
        prop_assert!(hi - lo <= 1);
        prop_assert_eq!(folds, kfold_split(n, k, seed).unwrap());
    }
}

#[test]
fn kfold_rejects_too_few_subjects() {
    assert!(kfold_split(5, 10, 0).is_err());
    assert!(kfold_split(10, 10, 0).is_ok());
}

#[test]
fn identity_reconstructor_scores_perfectly() {
    let data = tiny_data(12);
    let report = cross_validate(&data, &mut IdentityReconstructor, &CvConfig { k: 4, ..CvConfig::default() }).unwrap();
    assert_eq!(report.folds.len(), 4);
    assert_eq!(report.reconstructor, "identity");
    for f in &report.folds {
        for r in &f.rows {
            assert_eq!(r.mse, 0.0);
            assert_eq!(r.normdiff, 0.0);
            assert_eq!(r.cnr_normdiff, 0.0);
        }
    }
    assert_eq!((report.median.mse, report.median.normdiff), (0.0, 0.0));
    assert_eq!((report.mad.mse, report.mad.normdiff, report.mad.cnr_normdiff), (0.0, 0.0, 0.0));
    let rows: usize = report.folds.iter().map(|f| f.rows.len()).sum();
    assert_eq!(rows, 12 * 2);
}

#[test]
fn registry_builds_reconstructors() {
    let reg = reconstructors();
    let r = reg.get("fusenet").unwrap()(&tiny_model(), &tiny_train(1, 1e-3));
    assert_eq!(r.name(), "fusenet");
    assert!(reg.get("pca").is_err());
}

#[test]
fn fusenet_cross_validation_runs_per_fold() {
    let data = tiny_data(6);
    let mut recon = reconstructors().get("fusenet").unwrap()(&tiny_model(), &tiny_train(2, 1e-3));
    let report = cross_validate(&data, recon.as_mut(), &CvConfig { k: 3, ..CvConfig::default() }).unwrap();
    assert!(report.folds.iter().all(|f| f.loss_curve.len() == 2 && f.n_train == 4));
    assert!(report.median.mse.is_finite() && report.median.mse > 0.0);
}

#[test]
fn embeddings_are_idempotent_and_per_subject() {
    let mut data = tiny_data(3);
    data.subjects[2].volumes = data.subjects[0].volumes.clone();
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let a = extract_embeddings(&mut model, &data).unwrap();
    assert_eq!(a.len(), 3);
    assert!(a.iter().all(|r| r.len() == tiny_model().embedding_len()));
    assert_eq!(a[0], a[2]);
    assert_ne!(a[0], a[1]);
    assert_eq!(a, extract_embeddings(&mut model, &data).unwrap());
    let reversed = data.select(&[2, 1, 0]);
    let b = extract_embeddings(&mut model, &reversed).unwrap();
    assert_eq!(b, vec![a[2].clone(), a[1].clone(), a[0].clone()]);
}

#[test]
fn desk_embedding_length() {
    let data = synth_dataset(&SynthConfig {
        n_subjects: 1,
        n_groups: 1,
        ..SynthConfig::default()
    })
    .unwrap()
    .data;
    let mut model = FuseModel::<f32>::new(ModelConfig::desk()).unwrap();
    assert_eq!(extract_embeddings(&mut model, &data).unwrap()[0].len(), 384);
}

#[test]
fn checkpoint_roundtrip() {
    let data = tiny_data(2);
    let mut model = FuseModel::<f32>::new(tiny_model()).unwrap();
    train(&mut model, &data, &tiny_train(2, 1e-3)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    checkpoint::save(&model, &path).unwrap();
    let mut loaded = checkpoint::load(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(checkpoint::encode(&loaded), checkpoint::encode(&model));
    assert_eq!(
        extract_embeddings(&mut loaded, &data).unwrap(),
        extract_embeddings(&mut model, &data).unwrap()
    );
    let a = reconstruct(&mut loaded, &data.subjects[0]).unwrap();
    assert_eq!(a, reconstruct(&mut model, &data.subjects[0]).unwrap());
}

#[test]
fn checkpoint_corruption_is_detected() {
    let model = FuseModel::<f32>::new(tiny_model()).unwrap();
    let bytes = checkpoint::encode(&model);
    assert!(&bytes[..8] == b"FSNNCKPT");
    let n = bytes.len();
    for pos in [0, 9, 20, n / 2, n - 40, n - 1] {
        let mut bad = bytes.clone();
        bad[pos] ^= 0x10;
        assert!(matches!(checkpoint::decode(&bad), Err(NnError::Checkpoint(_))), "flip at {pos}");
    }
    assert!(checkpoint::decode(&bytes[..n - 1]).is_err());
    assert!(checkpoint::decode(&bytes[..10]).is_err());
    assert!(checkpoint::load("/nonexistent/model.ckpt").is_err());
}
