use std::fmt::Write as _;

use serde::Serialize;

use super::AttributionReport;
use crate::cue::{CueKind, CueToken, CueTokenSet};
use crate::discriminator::RiskModel;
use crate::error::{Error, Result};

/// Grid points per axis of a risk surface.
pub const SURFACE_STEPS: usize = 41;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DependenceRow {
    pub instance_id: String,
    pub value: f64,
    pub phi: f64,
    pub color_value: f64,
}

/// `(v_j, phi_j, v_k)` for every explained instance.
pub fn dependence_grid(
    instances: &[CueTokenSet],
    reports: &[AttributionReport],
    feature: CueKind,
    color: CueKind,
) -> Result<Vec<DependenceRow>> {
    if instances.len() != reports.len() {
        return Err(Error::Shape(format!(
            "{} instances but {} attribution reports",
            instances.len(),
            reports.len()
        )));
    }
    Ok(instances
        .iter()
        .zip(reports)
        .map(|(s, r)| DependenceRow {
            instance_id: r.instance_id.clone(),
            value: s.get(feature).v,
            phi: r.phi[feature.index()],
            color_value: s.get(color).v,
        })
        .collect())
}

pub fn dependence_csv(rows: &[DependenceRow], feature: CueKind, color: CueKind) -> String {
    let (f, c) = (feature.short_name(), color.short_name());
    let mut out = format!("instance_id,v_{f},phi_{f},v_{c}\n");
    for r in rows {
        writeln!(out, "{},{:.6},{:.8},{:.6}", r.instance_id, r.value, r.phi, r.color_value).unwrap();
    }
    out
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Per-cue median value and confidence over `background`. A cue whose
/// median value is zero gets confidence zero.
pub fn background_medians(background: &[CueTokenSet]) -> Result<CueTokenSet> {
    if background.is_empty() {
        return Err(Error::Validation("surface background is empty".into()));
    }
    let mut out = CueTokenSet::ZERO;
    for kind in CueKind::ALL {
        let v = median(background.iter().map(|s| s.get(kind).v).collect());
        let c = if v == 0.0 {
            0.0
        } else {
            median(background.iter().map(|s| s.get(kind).c).collect())
        };
        out.set(kind, CueToken::new(v, c));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SurfacePoint {
    pub v_a: f64,
    pub v_b: f64,
    pub score: f64,
}

/// Model scores over a 41 x 41 sweep of cues `a` and `b` across `[0, 1]`
/// with confidence 1, the remaining cues held at `base`. Rows run over `a`
/// in the outer loop.
pub fn surface_grid<M: RiskModel + ?Sized>(
    model: &M,
    a: CueKind,
    b: CueKind,
    base: &CueTokenSet,
) -> Result<Vec<SurfacePoint>> {
    if a == b {
        return Err(Error::Validation(format!("surface needs two distinct cues, got {a} twice")));
    }
    let step = |i: usize| i as f64 / (SURFACE_STEPS - 1) as f64;
    let mut scenes = Vec::with_capacity(SURFACE_STEPS * SURFACE_STEPS);
    let mut coords = Vec::with_capacity(SURFACE_STEPS * SURFACE_STEPS);
    for i in 0..SURFACE_STEPS {
        for j in 0..SURFACE_STEPS {
            let mut s = *base;
            s.set(a, CueToken::new(step(i), 1.0));
            s.set(b, CueToken::new(step(j), 1.0));
            scenes.push(s);
            coords.push((step(i), step(j)));
        }
    }
    let scores = model.scores(&scenes);
    Ok(coords
        .into_iter()
        .zip(scores)
        .map(|((v_a, v_b), score)| SurfacePoint { v_a, v_b, score })
        .collect())
}

pub fn surface_csv(points: &[SurfacePoint], a: CueKind, b: CueKind) -> String {
    let mut out = format!("v_{},v_{},score\n", a.short_name(), b.short_name());
    for p in points {
        writeln!(out, "{:.3},{:.3},{:.6}", p.v_a, p.v_b, p.score).unwrap();
    }
    out
}
