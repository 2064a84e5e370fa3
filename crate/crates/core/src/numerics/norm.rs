//! Layer and batch normalization with their backward passes.

use serde::{Deserialize, Serialize};

use super::Matrix;
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_EPS: f64 = 1e-5;
pub const BATCH_NORM_MOMENTUM: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Normalizes a single row over its entries using the population variance.
pub fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    assert!(x.len() == gamma.len() && x.len() == beta.len());
    let mut out = vec![0.0; x.len()];
    normalize_row(x, gamma, beta, eps, &mut out);
    out
}

fn normalize_row(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for (((o, &xi), g), b) in xhat.iter_mut().zip(x).zip(gamma).zip(beta) {
        *o = g * (xi - mean) * inv_std + b;
    }
    inv_std
}

/// Saved activations of a row-wise layer norm.
pub struct LayerNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
}

pub fn layer_norm_forward(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    eps: f64,
) -> (Matrix, LayerNormCache) {
    let (rows, cols) = x.shape();
    let ones = vec![1.0; cols];
    let zeros = vec![0.0; cols];
    let mut xhat = Matrix::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        inv_std.push(normalize_row(x.row(r), &ones, &zeros, eps, xhat.row_mut(r)));
    }
    let mut y = xhat.clone();
    for r in 0..rows {
        for ((o, g), b) in y.row_mut(r).iter_mut().zip(gamma).zip(beta) {
            *o = *o * g + b;
        }
    }
    (y, LayerNormCache { xhat, inv_std })
}

/// Returns `dL/dx` and accumulates the affine parameter gradients.
pub fn layer_norm_backward(
    dy: &Matrix,
    cache: &LayerNormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let (rows, cols) = dy.shape();
    let n = cols as f64;
    let mut dx = Matrix::zeros(rows, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        for j in 0..cols {
            dgamma[j] += dyr[j] * xh[j];
            dbeta[j] += dyr[j];
            dxhat[j] = dyr[j] * gamma[j];
            sum += dxhat[j];
            sum_xh += dxhat[j] * xh[j];
        }
        let s = cache.inv_std[r] / n;
        for (j, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = s * (n * dxhat[j] - sum - xh[j] * sum_xh);
        }
    }
    dx
}

/// Running statistics of a batch-norm layer, one entry per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNormStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

impl BatchNormStats {
    pub fn new(features: usize) -> Self {
        BatchNormStats {
            mean: vec![0.0; features],
            var: vec![1.0; features],
        }
    }

    /// Exponential moving update: `running = m * running + (1 - m) * batch`.
    /// The batch variance enters unbiased.
    pub fn update(&mut self, batch: &BatchMoments) {
        let m = BATCH_NORM_MOMENTUM;
        let correction = batch.n as f64 / (batch.n as f64 - 1.0);
        for j in 0..self.mean.len() {
            self.mean[j] = m * self.mean[j] + (1.0 - m) * batch.mean[j];
            self.var[j] = m * self.var[j] + (1.0 - m) * batch.var[j] * correction;
        }
    }
}

/// Per-feature mean and population variance of one mini-batch.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub n: usize,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub struct BatchNormCache {
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub mode: Mode,
    pub moments: Option<BatchMoments>,
}

/// Forward pass without touching the running statistics. In train mode the
/// batch moments are returned in the cache for the caller to fold in.
pub fn batch_norm_forward(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    stats: &BatchNormStats,
    mode: Mode,
) -> Result<(Matrix, BatchNormCache)> {
    let (n, f) = x.shape();
    let (mean, var, moments) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::Domain(
                    "batch norm in train mode needs at least 2 samples".into(),
                ));
            }
            let mut mean = vec![0.0; f];
            x.add_column_sums_into(&mut mean);
            mean.iter_mut().for_each(|m| *m /= n as f64);
            let mut var = vec![0.0; f];
            for r in 0..n {
                for (j, v) in var.iter_mut().enumerate() {
                    let d = x[(r, j)] - mean[j];
                    *v += d * d;
                }
            }
            var.iter_mut().for_each(|v| *v /= n as f64);
            let moments = BatchMoments {
                n,
                mean: mean.clone(),
                var: var.clone(),
            };
            (mean, var, Some(moments))
        }
        Mode::Eval => (stats.mean.clone(), stats.var.clone(), None),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCH_NORM_EPS).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, f);
    let mut y = Matrix::zeros(n, f);
    for r in 0..n {
        for j in 0..f {
            let h = (x[(r, j)] - mean[j]) * inv_std[j];
            xhat[(r, j)] = h;
            y[(r, j)] = gamma[j] * h + beta[j];
        }
    }
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            mode,
            moments,
        },
    ))
}

pub fn batch_norm_backward(
    dy: &Matrix,
    cache: &BatchNormCache,
    gamma: &[f64],
    dgamma: &mut [f64],
    dbeta: &mut [f64],
) -> Matrix {
    let (n, f) = dy.shape();
    let mut dx = Matrix::zeros(n, f);
    for j in 0..f {
        let mut sum = 0.0;
        let mut sum_xh = 0.0;
        for r in 0..n {
            let g = dy[(r, j)];
            let xh = cache.xhat[(r, j)];
            dgamma[j] += g * xh;
            dbeta[j] += g;
            sum += g * gamma[j];
            sum_xh += g * gamma[j] * xh;
        }
        match cache.mode {
            Mode::Eval => {
                for r in 0..n {
                    dx[(r, j)] = dy[(r, j)] * gamma[j] * cache.inv_std[j];
                }
            }
            Mode::Train => {
                let nf = n as f64;
                let s = cache.inv_std[j] / nf;
                for r in 0..n {
                    let dxhat = dy[(r, j)] * gamma[j];
                    dx[(r, j)] = s * (nf * dxhat - sum - cache.xhat[(r, j)] * sum_xh);
                }
            }
        }
    }
    dx
}

/// Batch normalization that folds train-mode moments into `stats`.
pub fn batch_norm(
    x: &Matrix,
    gamma: &[f64],
    beta: &[f64],
    stats: &mut BatchNormStats,
    mode: Mode,
) -> Result<Matrix> {
    let (y, cache) = batch_norm_forward(x, gamma, beta, stats, mode)?;
    if let Some(m) = &cache.moments {
        stats.update(m);
    }
    Ok(y)
}
