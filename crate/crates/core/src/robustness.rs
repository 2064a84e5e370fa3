//! Perturbation harness: token noise, single-cue ablation, and neighbor-scene
//! jitter, each scored against the unperturbed baseline.

use serde::Serialize;

use crate::cue::{tokenize, CueCaps, CueKind, CueToken, CueTokenSet, RawSceneObservation};
use crate::discriminator::RiskModel;
use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::training::{compute_metrics, Metrics};

pub const DEFAULT_SIGMAS: [f64; 4] = [0.0, 0.05, 0.1, 0.2];
pub const DEFAULT_JITTER: f64 = 0.10;

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Condition {
    Noise { sigma: f64 },
    Ablation { cue: &'static str },
    Jitter { relative: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PerturbationReport {
    pub condition: Condition,
    pub baseline: Metrics,
    pub perturbed: Metrics,
    pub delta_mae: f64,
    pub delta_rmse: f64,
    /// `None` when either R² is undefined.
    pub delta_r2: Option<f64>,
}

impl PerturbationReport {
    pub fn new(condition: Condition, baseline: Metrics, perturbed: Metrics) -> Self {
        PerturbationReport {
            delta_mae: perturbed.mae - baseline.mae,
            delta_rmse: perturbed.rmse - baseline.rmse,
            delta_r2: baseline.r2.zip(perturbed.r2).map(|(b, p)| p - b),
            condition,
            baseline,
            perturbed,
        }
    }
}

fn score<M: RiskModel + ?Sized>(model: &M, scenes: &[CueTokenSet], labels: &[f64]) -> Result<Metrics> {
    if scenes.len() != labels.len() {
        return Err(Error::Shape(format!(
            "{} scenes but {} labels",
            scenes.len(),
            labels.len()
        )));
    }
    compute_metrics(&model.scores(scenes), labels)
}

/// Adds `N(0, sigma^2)` to every token value and confidence, clamping to
/// `[0, 1]`.
pub fn add_token_noise(scenes: &[CueTokenSet], sigma: f64, seed: u64) -> Vec<CueTokenSet> {
    let mut rng = SeededRng::new(seed);
    scenes
        .iter()
        .map(|s| {
            let mut out = *s;
            for t in out.tokens.iter_mut() {
                let dv = sigma * rng.standard_normal();
                let dc = sigma * rng.standard_normal();
                *t = CueToken::new(t.v + dv, t.c + dc).clamped();
            }
            out
        })
        .collect()
}

/// One report per sigma. Every sigma scales the same seeded draws.
pub fn noise_sweep<M: RiskModel + ?Sized>(
    model: &M,
    scenes: &[CueTokenSet],
    labels: &[f64],
    sigmas: &[f64],
    seed: u64,
) -> Result<Vec<PerturbationReport>> {
    if let Some(s) = sigmas.iter().find(|s| !(**s >= 0.0 && s.is_finite())) {
        return Err(Error::Validation(format!("noise sigma {s} must be >= 0")));
    }
    let baseline = score(model, scenes, labels)?;
    let mut reports = Vec::with_capacity(sigmas.len());
    for &sigma in sigmas {
        let noisy = add_token_noise(scenes, sigma, seed);
        let perturbed = score(model, &noisy, labels)?;
        reports.push(PerturbationReport::new(
            Condition::Noise { sigma },
            baseline.clone(),
            perturbed,
        ));
    }
    Ok(reports)
}

/// Replaces cue `cue` in every scene with its mean token over `background`.
pub fn ablate_modality<M: RiskModel + ?Sized>(
    model: &M,
    scenes: &[CueTokenSet],
    labels: &[f64],
    cue: CueKind,
    background: &[CueTokenSet],
) -> Result<PerturbationReport> {
    if background.is_empty() {
        return Err(Error::Validation("ablation background is empty".into()));
    }
    let n = background.len() as f64;
    let mean = CueToken::new(
        background.iter().map(|s| s.get(cue).v).sum::<f64>() / n,
        background.iter().map(|s| s.get(cue).c).sum::<f64>() / n,
    );
    let ablated: Vec<CueTokenSet> = scenes
        .iter()
        .map(|s| {
            let mut out = *s;
            out.set(cue, mean);
            out
        })
        .collect();
    Ok(PerturbationReport::new(
        Condition::Ablation { cue: cue.label() },
        score(model, scenes, labels)?,
        score(model, &ablated, labels)?,
    ))
}

/// One report per cue, in cue order.
pub fn ablate_all<M: RiskModel + ?Sized>(
    model: &M,
    scenes: &[CueTokenSet],
    labels: &[f64],
    background: &[CueTokenSet],
) -> Result<Vec<PerturbationReport>> {
    CueKind::ALL
        .iter()
        .map(|&k| ablate_modality(model, scenes, labels, k, background))
        .collect()
}

/// A neighbor of `raw`: each count scaled by `1 + U(-relative, relative)`
/// and rounded. Confidences carry over, dropping to zero with their count.
pub fn neighbor(raw: &RawSceneObservation, relative: f64, rng: &mut SeededRng) -> RawSceneObservation {
    let mut out = raw.clone();
    for (count, conf) in out.counts.iter_mut().zip(out.confidences.iter_mut()) {
        let factor = 1.0 + rng.uniform_range(-relative, relative);
        *count = (f64::from(*count) * factor).round().max(0.0) as u32;
        if *count == 0 {
            *conf = 0.0;
        }
    }
    out
}

/// Scores every scene through a jittered neighbor against its own label.
pub fn jitter<M: RiskModel + ?Sized>(
    model: &M,
    scenes: &[RawSceneObservation],
    labels: &[f64],
    caps: &CueCaps,
    relative: f64,
    seed: u64,
) -> Result<PerturbationReport> {
    if !(0.0..1.0).contains(&relative) {
        return Err(Error::Validation(format!("jitter {relative} must lie in [0, 1)")));
    }
    let mut rng = SeededRng::new(seed);
    let mut own = Vec::with_capacity(scenes.len());
    let mut moved = Vec::with_capacity(scenes.len());
    for raw in scenes {
        own.push(tokenize(raw, caps)?);
        moved.push(tokenize(&neighbor(raw, relative, &mut rng), caps)?);
    }
    Ok(PerturbationReport::new(
        Condition::Jitter { relative },
        score(model, &own, labels)?,
        score(model, &moved, labels)?,
    ))
}
