use std::fmt::Write as _;

use serde::Serialize;

use crate::cue::{CueTokenSet, NUM_CUES};
use crate::error::{Error, Result};

/// Axis labels: the five cue values followed by the risk column.
pub const CORRELATION_LABELS: [&str; 6] = ["Nm_P", "Nm_Em", "Nm_Wp", "Nm_F", "Nm_BL", "Risk"];

const DIM: usize = NUM_CUES + 1;

/// Entries are `None` where a column has zero variance.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationMatrices {
    pub labels: [&'static str; DIM],
    pub pearson: [[Option<f64>; DIM]; DIM],
    pub spearman: [[Option<f64>; DIM]; DIM],
}

impl CorrelationMatrices {
    fn matrix_csv(m: &[[Option<f64>; DIM]; DIM]) -> String {
        let mut out = String::from("cue");
        for l in CORRELATION_LABELS {
            write!(out, ",{l}").unwrap();
        }
        out.push('\n');
        for (label, row) in CORRELATION_LABELS.iter().zip(m) {
            out.push_str(label);
            for x in row {
                match x {
                    Some(x) => write!(out, ",{x:.6}").unwrap(),
                    None => out.push_str(",NA"),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn pearson_csv(&self) -> String {
        Self::matrix_csv(&self.pearson)
    }

    pub fn spearman_csv(&self) -> String {
        Self::matrix_csv(&self.spearman)
    }
}

/// Ranks starting at 1, ties sharing their mean rank.
pub(crate) fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

fn pearson_matrix(cols: &[Vec<f64>; DIM]) -> [[Option<f64>; DIM]; DIM] {
    let n = cols[0].len() as f64;
    let centered: Vec<Vec<f64>> = cols
        .iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            c.iter().map(|x| x - mean).collect()
        })
        .collect();
    let norms: Vec<f64> = cols
        .iter()
        .zip(&centered)
        .map(|(raw, c)| {
            if raw.iter().all(|&x| x == raw[0]) {
                0.0
            } else {
                c.iter().map(|x| x * x).sum::<f64>().sqrt()
            }
        })
        .collect();
    let mut m = [[None; DIM]; DIM];
    for i in 0..DIM {
        if norms[i] == 0.0 {
            continue;
        }
        m[i][i] = Some(1.0);
        for j in 0..i {
            if norms[j] == 0.0 {
                continue;
            }
            let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
            let r = (dot / (norms[i] * norms[j])).clamp(-1.0, 1.0);
            m[i][j] = Some(r);
            m[j][i] = Some(r);
        }
    }
    m
}

/// Pearson and Spearman matrices over the cue values of `scenes` and a risk
/// column (model predictions or labels).
pub fn correlations(scenes: &[CueTokenSet], risk: &[f64]) -> Result<CorrelationMatrices> {
    if scenes.len() != risk.len() {
        return Err(Error::Shape(format!(
            "{} scenes but {} risk values",
            scenes.len(),
            risk.len()
        )));
    }
    if scenes.len() < 3 {
        return Err(Error::Validation("correlations need at least 3 samples".into()));
    }
    if risk.iter().any(|r| !r.is_finite()) {
        return Err(Error::NonFinite("risk column".into()));
    }
    let mut cols: [Vec<f64>; DIM] = Default::default();
    for s in scenes {
        for (k, v) in s.values().into_iter().enumerate() {
            cols[k].push(v);
        }
    }
    cols[NUM_CUES] = risk.to_vec();
    let pearson = pearson_matrix(&cols);
    if pearson.iter().all(|row| row.iter().all(Option::is_none)) {
        return Err(Error::Undefined("every column is constant".into()));
    }
    let ranked = cols.map(|c| average_ranks(&c));
    Ok(CorrelationMatrices {
        labels: CORRELATION_LABELS,
        pearson,
        spearman: pearson_matrix(&ranked),
    })
}
