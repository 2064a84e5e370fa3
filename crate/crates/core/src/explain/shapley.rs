use std::collections::HashMap;

use serde::Serialize;

use crate::cue::{CueTokenSet, NUM_CUES};
use crate::discriminator::RiskModel;
use crate::error::{Error, Result};

pub const NUM_COALITIONS: usize = 1 << NUM_CUES;

/// Instances whose hybrid scenes are scored together.
const INSTANCE_CHUNK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttributionReport {
    pub instance_id: String,
    /// Mean model output over the background.
    pub base_value: f64,
    /// Model output on the instance.
    pub prediction: f64,
    pub phi: [f64; NUM_CUES],
    /// Symmetric; the diagonal holds each cue's main effect
    /// `phi_i - sum_{j != i} interaction_ij`.
    pub interaction: [[f64; NUM_CUES]; NUM_CUES],
    pub background_size: usize,
}

fn factorial(n: usize) -> f64 {
    (1..=n).product::<usize>() as f64
}

/// Interventional Shapley values over the five cues, computed exactly from
/// all 32 coalitions. A coalition takes each member cue's full token from
/// the instance and every other token from a background scene; its value is
/// the mean model output over the background.
pub struct ShapleyExplainer<'a, M: RiskModel + ?Sized> {
    model: &'a M,
    background: &'a [CueTokenSet],
}

impl<'a, M: RiskModel + ?Sized> ShapleyExplainer<'a, M> {
    pub fn new(model: &'a M, background: &'a [CueTokenSet]) -> Result<Self> {
        if background.is_empty() {
            return Err(Error::Validation("Shapley background is empty".into()));
        }
        Ok(ShapleyExplainer { model, background })
    }

    pub fn background(&self) -> &[CueTokenSet] {
        self.background
    }

    /// Coalition values `v(S)` for each instance, indexed by bitmask
    /// (bit `k` set when cue `k` comes from the instance).
    pub fn coalition_values(&self, instances: &[CueTokenSet]) -> Vec<[f64; NUM_COALITIONS]> {
        let mut out = Vec::with_capacity(instances.len());
        for chunk in instances.chunks(INSTANCE_CHUNK) {
            // Identical hybrids are common (absent cues share the zero
            // token), so each distinct scene is scored once.
            let mut unique: Vec<CueTokenSet> = Vec::new();
            let mut lookup: HashMap<[u64; 2 * NUM_CUES], usize> = HashMap::new();
            let mut slots = Vec::with_capacity(chunk.len() * NUM_COALITIONS * self.background.len());
            for inst in chunk {
                for mask in 0..NUM_COALITIONS {
                    for bg in self.background {
                        let mut hybrid = *bg;
                        for k in 0..NUM_CUES {
                            if mask & (1 << k) != 0 {
                                hybrid.tokens[k] = inst.tokens[k];
                            }
                        }
                        let key = scene_key(&hybrid);
                        let slot = *lookup.entry(key).or_insert_with(|| {
                            unique.push(hybrid);
                            unique.len() - 1
                        });
                        slots.push(slot);
                    }
                }
            }
            let scores = self.model.scores(&unique);
            let b = self.background.len();
            for i in 0..chunk.len() {
                let mut v = [0.0; NUM_COALITIONS];
                for (mask, vm) in v.iter_mut().enumerate() {
                    let start = (i * NUM_COALITIONS + mask) * b;
                    *vm = slots[start..start + b].iter().map(|&s| scores[s]).sum::<f64>() / b as f64;
                }
                out.push(v);
            }
        }
        out
    }

    pub fn explain(&self, instance: &CueTokenSet) -> AttributionReport {
        let mut r = self.explain_many(std::slice::from_ref(instance), &["0".to_string()]);
        r.pop().expect("one report")
    }

    /// One report per instance, in input order.
    pub fn explain_many(&self, instances: &[CueTokenSet], ids: &[String]) -> Vec<AttributionReport> {
        assert_eq!(instances.len(), ids.len(), "one id per instance");
        let predictions = self.model.scores(instances);
        self.coalition_values(instances)
            .iter()
            .zip(ids)
            .zip(predictions)
            .map(|((v, id), prediction)| {
                let (phi, interaction) = attributions(v);
                AttributionReport {
                    instance_id: id.clone(),
                    base_value: v[0],
                    prediction,
                    phi,
                    interaction,
                    background_size: self.background.len(),
                }
            })
            .collect()
    }
}

fn scene_key(s: &CueTokenSet) -> [u64; 2 * NUM_CUES] {
    let mut key = [0u64; 2 * NUM_CUES];
    for (k, t) in s.tokens.iter().enumerate() {
        key[2 * k] = t.v.to_bits();
        key[2 * k + 1] = t.c.to_bits();
    }
    key
}

/// Shapley values and pairwise interaction indices from the coalition
/// values of a 5-player game.
pub(crate) fn attributions(v: &[f64; NUM_COALITIONS]) -> ([f64; NUM_CUES], [[f64; NUM_CUES]; NUM_CUES]) {
    let n = NUM_CUES;
    let mut phi = [0.0; NUM_CUES];
    for (i, p) in phi.iter_mut().enumerate() {
        let bit = 1 << i;
        for s in 0..NUM_COALITIONS {
            if s & bit != 0 {
                continue;
            }
            let size = s.count_ones() as usize;
            let w = factorial(size) * factorial(n - size - 1) / factorial(n);
            *p += w * (v[s | bit] - v[s]);
        }
    }
    let mut inter = [[0.0; NUM_CUES]; NUM_CUES];
    for i in 0..n {
        for j in (i + 1)..n {
            let pair = (1 << i) | (1 << j);
            let mut total = 0.0;
            for s in 0..NUM_COALITIONS {
                if s & pair != 0 {
                    continue;
                }
                let size = s.count_ones() as usize;
                let w = factorial(size) * factorial(n - size - 2) / factorial(n - 1);
                let delta = v[s | pair] - v[s | (1 << i)] - v[s | (1 << j)] + v[s];
                total += w * delta;
            }
            inter[i][j] = total;
            inter[j][i] = total;
        }
    }
    for i in 0..n {
        let off: f64 = (0..n).filter(|&j| j != i).map(|j| inter[i][j]).sum();
        inter[i][i] = phi[i] - off;
    }
    (phi, inter)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalImportance {
    pub mean_abs_phi: [f64; NUM_CUES],
    /// Shares of the total mean |phi|, summing to 100.
    pub percent: [f64; NUM_CUES],
    pub n_instances: usize,
}

pub fn global_importance(reports: &[AttributionReport]) -> Result<GlobalImportance> {
    if reports.is_empty() {
        return Err(Error::Validation("explanation set is empty".into()));
    }
    let n = reports.len() as f64;
    let mut mean = [0.0; NUM_CUES];
    for r in reports {
        for (m, p) in mean.iter_mut().zip(r.phi) {
            *m += p.abs();
        }
    }
    mean = mean.map(|m| m / n);
    let total: f64 = mean.iter().sum();
    if total <= 0.0 {
        return Err(Error::Undefined("every attribution is zero".into()));
    }
    Ok(GlobalImportance {
        mean_abs_phi: mean,
        percent: mean.map(|m| 100.0 * m / total),
        n_instances: reports.len(),
    })
}

/// Mean absolute interaction matrix over a set of reports.
pub fn mean_abs_interactions(reports: &[AttributionReport]) -> [[f64; NUM_CUES]; NUM_CUES] {
    let mut m = [[0.0; NUM_CUES]; NUM_CUES];
    for r in reports {
        for i in 0..NUM_CUES {
            for j in 0..NUM_CUES {
                m[i][j] += r.interaction[i][j].abs();
            }
        }
    }
    let n = reports.len().max(1) as f64;
    m.map(|row| row.map(|x| x / n))
}
