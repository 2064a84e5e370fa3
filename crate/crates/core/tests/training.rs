use dusev_core::cue::{CueCaps, CueTokenSet};
use dusev_core::discriminator::{ModelConfig, RiskModel};
use dusev_core::error::Error;
use dusev_core::synthetic::{generate, split, GeneratorConfig};
use dusev_core::training::*;

fn tiny_model() -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        ffn_dim: 32,
        head_widths: [16, 8],
        ..ModelConfig::default()
    }
}

fn synthetic(n: usize, seed: u64) -> (Vec<CueTokenSet>, Vec<f64>) {
    let data = generate(&GeneratorConfig {
        n_scenes: n,
        seed,
        ..GeneratorConfig::default()
    })
    .unwrap();
    (data.tokens(&CueCaps::default()).unwrap(), data.labels())
}

#[test]
fn stops_when_validation_worsens() {
    let (scenes, _) = synthetic(96, 1);
    let train_labels = vec![9.0; 64];
    let val_labels = vec![0.5; 32];
    let config = TrainConfig {
        epochs: 10,
        patience: 1,
        lr: 1e-2,
        ..TrainConfig::default()
    };
    let (model, h) = train(
        LabeledSet::new(&scenes[..64], &train_labels).unwrap(),
        LabeledSet::new(&scenes[64..], &val_labels).unwrap(),
        &tiny_model(),
        &config,
    )
    .unwrap();
    assert_eq!(h.epochs.len(), 2);
    assert_eq!(h.best_epoch, 1);
    assert_eq!(h.stop_reason, StopReason::EarlyStopped);
    assert!(h.epochs[1].val_rmse > h.epochs[0].val_rmse);
    let kept = compute_metrics(&model.scores(&scenes[64..]), &val_labels).unwrap();
    assert_eq!(kept.rmse, h.epochs[0].val_rmse);
}

#[test]
fn keeps_best_epoch_and_is_deterministic() {
    let (scenes, labels) = synthetic(400, 2);
    let config = TrainConfig {
        epochs: 6,
        patience: 2,
        lr: 3e-3,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        train(
            LabeledSet::new(&scenes[..300], &labels[..300]).unwrap(),
            LabeledSet::new(&scenes[300..], &labels[300..]).unwrap(),
            &tiny_model(),
            &config,
        )
        .unwrap()
    };
    let (model, h) = run();
    let (model2, h2) = run();
    assert_eq!(h, h2);
    assert_eq!(model, model2);

    let best = h
        .epochs
        .iter()
        .min_by(|a, b| a.val_rmse.total_cmp(&b.val_rmse))
        .unwrap();
    assert_eq!(best.epoch, h.best_epoch);
    assert_eq!(h.epochs.iter().rfind(|e| e.is_best).unwrap().epoch, h.best_epoch);
    if h.stop_reason == StopReason::EarlyStopped {
        assert_eq!(h.epochs.len(), h.best_epoch + config.patience);
    } else {
        assert_eq!(h.epochs.len(), config.epochs);
    }
    let kept = compute_metrics(&model.scores(&scenes[300..]), &labels[300..]).unwrap();
    assert_eq!(kept.rmse, best.val_rmse);
    assert_eq!(kept.mae, best.val_mae);
    for e in &h.epochs {
        assert!(e.val_mae <= e.val_rmse);
    }

    let csv = h.to_csv();
    assert_eq!(csv.lines().count(), h.epochs.len() + 1);
}

#[test]
fn training_loss_trends_down() {
    let data = generate(&GeneratorConfig {
        n_scenes: 1500,
        seed: 42,
        ..GeneratorConfig::default()
    })
    .unwrap();
    let s = split(&data, [0.7, 0.15, 0.15], 42).unwrap();
    let caps = CueCaps::default();
    let (tr, trl) = (s.train.tokens(&caps).unwrap(), s.train.labels());
    let (va, val) = (s.val.tokens(&caps).unwrap(), s.val.labels());
    let config = TrainConfig {
        epochs: 5,
        patience: 5,
        ..TrainConfig::default()
    };
    let (_, h) = train(
        LabeledSet::new(&tr, &trl).unwrap(),
        LabeledSet::new(&va, &val).unwrap(),
        &ModelConfig::default(),
        &config,
    )
    .unwrap();
    let mut deltas: Vec<f64> = h.epochs.windows(2).map(|w| w[1].train_mse - w[0].train_mse).collect();
    deltas.sort_by(f64::total_cmp);
    assert!(deltas[deltas.len() / 2] < 0.0, "{:?}", h.epochs);
}

#[test]
fn divergence_is_reported() {
    let (scenes, labels) = synthetic(64, 3);
    let config = TrainConfig {
        epochs: 3,
        patience: 1,
        lr: 1e300,
        ..TrainConfig::default()
    };
    let err = train(
        LabeledSet::new(&scenes[..48], &labels[..48]).unwrap(),
        LabeledSet::new(&scenes[48..], &labels[48..]).unwrap(),
        &tiny_model(),
        &config,
    )
    .unwrap_err();
    assert!(matches!(err, Error::Diverged(_)), "{err}");
    assert!(err.to_string().contains("epoch 1"), "{err}");
}

#[test]
fn rejects_short_train_split() {
    let (scenes, labels) = synthetic(20, 4);
    let err = train(
        LabeledSet::new(&scenes[..10], &labels[..10]).unwrap(),
        LabeledSet::new(&scenes[10..], &labels[10..]).unwrap(),
        &tiny_model(),
        &TrainConfig::default(),
    )
    .unwrap_err();
    assert!(matches!(err, Error::Validation(_)));
    assert!(LabeledSet::new(&scenes, &labels[..3]).is_err());
}
