//! Mini-batch training with early stopping, plus regression and band metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::cue::{quantize, CueTokenSet, RiskBand};
use crate::discriminator::{Discriminator, ModelConfig, RiskModel};
use crate::error::{Error, Result};
use crate::numerics::{Mode, ParamSet};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub patience: usize,
    pub seed: u64,
    pub shuffle_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 16,
            lr: 1e-4,
            patience: 8,
            seed: 42,
            shuffle_each_epoch: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.patience == 0 {
            return Err(Error::Config("epochs and patience must be positive".into()));
        }
        if self.patience > self.epochs {
            return Err(Error::Config(format!(
                "patience {} exceeds epochs {}",
                self.patience, self.epochs
            )));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 for batch norm".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        Ok(())
    }
}

/// Scenes with risk labels on the 0-10 scale.
#[derive(Debug, Clone, Copy)]
pub struct LabeledSet<'a> {
    pub scenes: &'a [CueTokenSet],
    pub labels: &'a [f64],
}

impl<'a> LabeledSet<'a> {
    pub fn new(scenes: &'a [CueTokenSet], labels: &'a [f64]) -> Result<Self> {
        if scenes.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scenes but {} labels",
                scenes.len(),
                labels.len()
            )));
        }
        Ok(LabeledSet { scenes, labels })
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// One-based.
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub is_best: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStopped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    /// One-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_mse,val_mae,val_rmse,is_best\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{:.8},{:.8},{:.8},{}",
                e.epoch, e.train_mse, e.val_mae, e.val_rmse, e.is_best
            )
            .unwrap();
        }
        out
    }
}

pub fn train(
    train_set: LabeledSet<'_>,
    val_set: LabeledSet<'_>,
    model_config: &ModelConfig,
    config: &TrainConfig,
) -> Result<(Discriminator, History)> {
    train_with_progress(train_set, val_set, model_config, config, |_| {})
}

/// Trains a fresh model and returns the parameters of the best validation
/// epoch. `progress` sees each epoch record as it completes.
pub fn train_with_progress(
    train_set: LabeledSet<'_>,
    val_set: LabeledSet<'_>,
    model_config: &ModelConfig,
    config: &TrainConfig,
    mut progress: impl FnMut(&EpochRecord),
) -> Result<(Discriminator, History)> {
    config.validate()?;
    model_config.validate()?;
    if train_set.len() < config.batch_size {
        return Err(Error::Validation(format!(
            "train split has {} scenes, fewer than batch size {}",
            train_set.len(),
            config.batch_size
        )));
    }
    if val_set.is_empty() {
        return Err(Error::Validation("validation split is empty".into()));
    }
    let scale = model_config.score_scale;
    let targets: Vec<f64> = train_set.labels.iter().map(|y| y / scale).collect();

    let mut model = Discriminator::new(model_config.clone())?;
    let mut best = model.params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut rng = SeededRng::new(config.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut records: Vec<EpochRecord> = Vec::with_capacity(config.epochs);
    let mut stop_reason = StopReason::MaxEpochs;

    let mut batch_scenes = Vec::with_capacity(config.batch_size);
    let mut batch_targets = Vec::with_capacity(config.batch_size);
    for epoch in 1..=config.epochs {
        if config.shuffle_each_epoch {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let n_batches = order.len() / config.batch_size;
        for (b, idx) in order.chunks_exact(config.batch_size).enumerate() {
            batch_scenes.clear();
            batch_targets.clear();
            for &i in idx {
                batch_scenes.push(train_set.scenes[i]);
                batch_targets.push(targets[i]);
            }
            let diverged = |e: Error| {
                Error::Diverged(format!("epoch {epoch}, batch {}/{n_batches}: {e}", b + 1))
            };
            let loss = model
                .loss_and_grads(&batch_scenes, &batch_targets, Mode::Train)
                .map_err(diverged)?;
            for p in model.params_mut() {
                p.adam_step(config.lr).map_err(diverged)?;
            }
            loss_sum += loss;
        }
        let train_mse = loss_sum / n_batches as f64 * scale * scale;
        let val = compute_metrics(&model.scores(val_set.scenes), val_set.labels)?;
        let val_mse = val.rmse * val.rmse;
        if !val_mse.is_finite() {
            return Err(Error::Diverged(format!("epoch {epoch}: validation loss is not finite")));
        }
        let is_best = val_mse < best_val;
        if is_best {
            best_val = val_mse;
            best_epoch = epoch;
            best = model.params.clone();
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            train_mse,
            val_mae: val.mae,
            val_rmse: val.rmse,
            is_best,
        };
        progress(&record);
        records.push(record);
        if stale >= config.patience {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }
    model.params = best;
    model.zero_grads();
    Ok((
        model,
        History {
            epochs: records,
            best_epoch,
            stop_reason,
        },
    ))
}

/// Regression metrics on the 0-10 scale. `r2` is `None` when the targets
/// have zero variance; `mape` is `None` when every target is below 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    pub r2: Option<f64>,
    pub mape: Option<f64>,
    pub n_samples: usize,
    pub n_excluded_from_mape: usize,
}

impl Metrics {
    /// R² or an [`Error::Undefined`].
    pub fn r2(&self) -> Result<f64> {
        self.r2
            .ok_or_else(|| Error::Undefined("R² of zero-variance targets".into()))
    }
}

pub const MAPE_MIN_TARGET: f64 = 1.0;

pub fn compute_metrics(predictions: &[f64], targets: &[f64]) -> Result<Metrics> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape(format!(
            "metrics need equal non-zero lengths, got {} predictions and {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    let n = targets.len() as f64;
    let mut abs_sum = 0.0;
    let mut sq_sum = 0.0;
    let mut ape_sum = 0.0;
    let mut n_ape = 0usize;
    for (&p, &y) in predictions.iter().zip(targets) {
        let e = p - y;
        abs_sum += e.abs();
        sq_sum += e * e;
        if y >= MAPE_MIN_TARGET {
            ape_sum += e.abs() / y.abs();
            n_ape += 1;
        }
    }
    let mean = targets.iter().sum::<f64>() / n;
    let ss_tot: f64 = targets.iter().map(|y| (y - mean) * (y - mean)).sum();
    let constant = targets.iter().all(|&y| y == targets[0]);
    Ok(Metrics {
        mae: abs_sum / n,
        rmse: (sq_sum / n).sqrt(),
        r2: (!constant && ss_tot > 0.0).then(|| 1.0 - sq_sum / ss_tot),
        mape: (n_ape > 0).then(|| ape_sum / n_ape as f64 * 100.0),
        n_samples: targets.len(),
        n_excluded_from_mape: targets.len() - n_ape,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandReport {
    /// `confusion[target][predicted]`, bands ordered Low, Medium, High.
    pub confusion: [[usize; 3]; 3],
    pub accuracy: f64,
    /// `None` for a band never predicted.
    pub precision: [Option<f64>; 3],
    /// `None` for a band absent from the targets.
    pub recall: [Option<f64>; 3],
}

fn band_of(score: f64) -> RiskBand {
    quantize(score.clamp(0.0, 10.0)).unwrap_or(RiskBand::Low)
}

pub fn band_report(predictions: &[f64], targets: &[f64]) -> Result<BandReport> {
    if predictions.len() != targets.len() || targets.is_empty() {
        return Err(Error::Shape("band report needs equal non-zero lengths".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    for (&p, &y) in predictions.iter().zip(targets) {
        confusion[band_of(y).index()][band_of(p).index()] += 1;
    }
    let correct: usize = (0..3).map(|k| confusion[k][k]).sum();
    let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
    let precision = [0, 1, 2].map(|k| ratio(confusion[k][k], (0..3).map(|t| confusion[t][k]).sum()));
    let recall = [0, 1, 2].map(|k| ratio(confusion[k][k], confusion[k].iter().sum()));
    Ok(BandReport {
        confusion,
        accuracy: correct as f64 / targets.len() as f64,
        precision,
        recall,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_metrics() {
        let m = compute_metrics(&[2.0, 4.0], &[1.0, 5.0]).unwrap();
        assert_eq!(m.mae, 1.0);
        assert_eq!(m.rmse, 1.0);
        assert_eq!(m.r2, Some(0.75));
        // |2-1|/1 and |4-5|/5
        assert!((m.mape.unwrap() - 60.0).abs() < 1e-12);
        assert_eq!(m.n_excluded_from_mape, 0);
    }

    #[test]
    fn perfect_and_mean_predictions() {
        let y = [0.5, 2.0, 7.5, 9.0];
        let m = compute_metrics(&y, &y).unwrap();
        assert_eq!((m.mae, m.rmse, m.r2, m.mape), (0.0, 0.0, Some(1.0), Some(0.0)));
        assert_eq!(m.n_excluded_from_mape, 1);
        let mean = y.iter().sum::<f64>() / 4.0;
        let m = compute_metrics(&[mean; 4], &y).unwrap();
        assert!(m.r2.unwrap().abs() < 1e-15);
    }

    #[test]
    fn zero_variance_targets_flag_r2() {
        let m = compute_metrics(&[1.0, 2.0], &[3.0, 3.0]).unwrap();
        assert_eq!(m.r2, None);
        assert!(matches!(m.r2(), Err(Error::Undefined(_))));
        assert!(compute_metrics(&[0.5], &[0.2]).unwrap().mape.is_none());
        assert!(compute_metrics(&[], &[]).is_err());
        assert!(compute_metrics(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn band_reports() {
        let y = [1.0, 5.0, 8.0];
        let r = band_report(&y, &y).unwrap();
        assert_eq!(r.confusion, [[1, 0, 0], [0, 1, 0], [0, 0, 1]]);
        assert_eq!(r.accuracy, 1.0);
        let r = band_report(&[0.0; 3], &[9.0; 3]).unwrap();
        assert_eq!(r.accuracy, 0.0);
        assert_eq!(r.recall[2], Some(0.0));
        assert_eq!(r.precision[2], None);
    }

    #[test]
    fn mixed_band_counts() {
        // (target, predicted) bands: L/L, L/M, M/M, M/H, H/H, H/L
        let targets = [1.0, 3.0, 4.0, 6.0, 7.0, 9.9];
        let preds = [0.2, 3.5, 6.49, 6.5, 10.0, 3.49];
        let r = band_report(&preds, &targets).unwrap();
        assert_eq!(r.confusion, [[1, 1, 0], [0, 1, 1], [1, 0, 1]]);
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.precision, [Some(0.5), Some(0.5), Some(0.5)]);
        assert_eq!(r.recall, [Some(0.5), Some(0.5), Some(0.5)]);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        for bad in [
            TrainConfig { patience: 60, ..TrainConfig::default() },
            TrainConfig { batch_size: 1, ..TrainConfig::default() },
            TrainConfig { lr: 0.0, ..TrainConfig::default() },
            TrainConfig { epochs: 0, ..TrainConfig::default() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }

    #[test]
    fn history_csv_format() {
        let h = History {
            epochs: vec![EpochRecord {
                epoch: 1,
                train_mse: 0.5,
                val_mae: 0.25,
                val_rmse: 0.3,
                is_best: true,
            }],
            best_epoch: 1,
            stop_reason: StopReason::MaxEpochs,
        };
        assert_eq!(
            h.to_csv(),
            "epoch,train_mse,val_mae,val_rmse,is_best\n1,0.50000000,0.25000000,0.30000000,true\n"
        );
    }
}
