//! Batched forward pass with saved activations, and the matching
//! reverse-mode backward pass.
//!
//! A batch of `B` scenes is stacked into a `6B x d` token matrix: row `6b` is
//! the CLS token of scene `b`, rows `6b+1..6b+6` its five cue tokens. Linear
//! maps act on the whole stack at once; attention mixes rows only within a
//! scene.

use super::params::{EncoderLayerParams, HeadParams, ModelConfig, ModelParams};
use crate::cue::{CueTokenSet, NUM_CUES};
use crate::error::Result;
use crate::numerics::{
    batch_norm_backward, batch_norm_forward, gemm, layer_norm_backward, layer_norm_forward,
    softmax_in_place, BatchNormCache, LayerNormCache, Matrix, Mode, ParamTensor, LAYER_NORM_EPS,
};

pub const SEQ_LEN: usize = NUM_CUES + 1;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn linear(x: &Matrix, w: &ParamTensor, b: &ParamTensor) -> Matrix {
    let mut y = Matrix::zeros(x.rows(), w.value.cols());
    gemm(1.0, x, false, &w.value, false, 0.0, &mut y);
    y.add_row_broadcast(b.value.as_slice());
    y
}

/// Accumulates weight and bias gradients; returns `dL/dx`.
fn linear_backward(dy: &Matrix, x: &Matrix, w: &mut ParamTensor, b: &mut ParamTensor) -> Matrix {
    gemm(1.0, x, true, dy, false, 1.0, &mut w.grad);
    dy.add_column_sums_into(b.grad.as_mut_slice());
    let mut dx = Matrix::zeros(dy.rows(), w.value.rows());
    gemm(1.0, dy, false, &w.value, true, 0.0, &mut dx);
    dx
}

struct LayerCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    /// Attention probabilities indexed `[scene][head][query][key]`.
    probs: Vec<f64>,
    attn: Matrix,
    ln1: LayerNormCache,
    a: Matrix,
    h1: Matrix,
    g: Matrix,
    ln2: LayerNormCache,
}

struct HeadCache {
    cls: Matrix,
    bn1: BatchNormCache,
    r1: Matrix,
    bn2: BatchNormCache,
    r2: Matrix,
}

/// Activations of one forward pass, kept for the backward pass.
pub struct ForwardPass {
    batch: usize,
    inputs: Vec<CueTokenSet>,
    layers: Vec<LayerCache>,
    head: HeadCache,
    /// Sigmoid outputs in `(0, 1)`, one per scene.
    pub outputs: Vec<f64>,
}

impl ForwardPass {
    pub fn batch_size(&self) -> usize {
        self.batch
    }

    /// Attention maps of scene `b`: `[layer][head]` of row-major 6x6.
    pub fn attention(&self, b: usize, n_heads: usize) -> Vec<Vec<[[f64; SEQ_LEN]; SEQ_LEN]>> {
        let per_head = SEQ_LEN * SEQ_LEN;
        self.layers
            .iter()
            .map(|layer| {
                (0..n_heads)
                    .map(|h| {
                        let base = (b * n_heads + h) * per_head;
                        let mut m = [[0.0; SEQ_LEN]; SEQ_LEN];
                        for (i, row) in m.iter_mut().enumerate() {
                            row.copy_from_slice(
                                &layer.probs[base + i * SEQ_LEN..base + (i + 1) * SEQ_LEN],
                            );
                        }
                        m
                    })
                    .collect()
            })
            .collect()
    }

    /// Batch moments seen by the two head batch-norm layers (train mode only).
    pub fn batch_moments(&self) -> [Option<&crate::numerics::BatchMoments>; 2] {
        [self.head.bn1.moments.as_ref(), self.head.bn2.moments.as_ref()]
    }
}

pub fn embed(scenes: &[CueTokenSet], params: &ModelParams) -> Matrix {
    let d = params.cls.value.cols();
    let mut x = Matrix::zeros(scenes.len() * SEQ_LEN, d);
    let we = &params.embed_w.value;
    let be = params.embed_b.value.as_slice();
    for (b, scene) in scenes.iter().enumerate() {
        x.row_mut(b * SEQ_LEN)
            .copy_from_slice(params.cls.value.as_slice());
        for (i, tok) in scene.tokens.iter().enumerate() {
            let pos = params.pos.value.row(i);
            let ty = params.cue_type.value.row(i);
            let row = x.row_mut(b * SEQ_LEN + 1 + i);
            for j in 0..d {
                row[j] = we[(j, 0)] * tok.v + we[(j, 1)] * tok.c + be[j] + pos[j] + ty[j];
            }
        }
    }
    x
}

fn embed_backward(dx: &Matrix, scenes: &[CueTokenSet], params: &mut ModelParams) {
    let d = dx.cols();
    for (b, scene) in scenes.iter().enumerate() {
        for (g, x) in params
            .cls
            .grad
            .as_mut_slice()
            .iter_mut()
            .zip(dx.row(b * SEQ_LEN))
        {
            *g += x;
        }
        for (i, tok) in scene.tokens.iter().enumerate() {
            let row = dx.row(b * SEQ_LEN + 1 + i);
            for j in 0..d {
                params.embed_w.grad[(j, 0)] += row[j] * tok.v;
                params.embed_w.grad[(j, 1)] += row[j] * tok.c;
                params.embed_b.grad.as_mut_slice()[j] += row[j];
                params.pos.grad[(i, j)] += row[j];
                params.cue_type.grad[(i, j)] += row[j];
            }
        }
    }
}

fn attention_forward(q: &Matrix, k: &Matrix, v: &Matrix, config: &ModelConfig) -> (Matrix, Vec<f64>) {
    let n_heads = config.n_heads;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let batch = q.rows() / SEQ_LEN;
    let mut probs = vec![0.0; batch * n_heads * SEQ_LEN * SEQ_LEN];
    let mut out = Matrix::zeros(q.rows(), q.cols());
    for b in 0..batch {
        let r0 = b * SEQ_LEN;
        for h in 0..n_heads {
            let c0 = h * dh;
            let base = (b * n_heads + h) * SEQ_LEN * SEQ_LEN;
            for i in 0..SEQ_LEN {
                let qi = &q.row(r0 + i)[c0..c0 + dh];
                let p = &mut probs[base + i * SEQ_LEN..base + (i + 1) * SEQ_LEN];
                for (j, pj) in p.iter_mut().enumerate() {
                    let kj = &k.row(r0 + j)[c0..c0 + dh];
                    *pj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
                }
                softmax_in_place(p);
                let o = &mut out.row_mut(r0 + i)[c0..c0 + dh];
                for (j, &pj) in p.iter().enumerate() {
                    let vj = &v.row(r0 + j)[c0..c0 + dh];
                    for (ot, vt) in o.iter_mut().zip(vj) {
                        *ot += pj * vt;
                    }
                }
            }
        }
    }
    (out, probs)
}

fn attention_backward(
    dout: &Matrix,
    cache: &LayerCache,
    config: &ModelConfig,
) -> (Matrix, Matrix, Matrix) {
    let n_heads = config.n_heads;
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let batch = dout.rows() / SEQ_LEN;
    let (q, k, v) = (&cache.q, &cache.k, &cache.v);
    let mut dq = Matrix::zeros(q.rows(), q.cols());
    let mut dk = Matrix::zeros(k.rows(), k.cols());
    let mut dv = Matrix::zeros(v.rows(), v.cols());
    let mut dp = [0.0; SEQ_LEN];
    for b in 0..batch {
        let r0 = b * SEQ_LEN;
        for h in 0..n_heads {
            let c0 = h * dh;
            let base = (b * n_heads + h) * SEQ_LEN * SEQ_LEN;
            for i in 0..SEQ_LEN {
                let p = &cache.probs[base + i * SEQ_LEN..base + (i + 1) * SEQ_LEN];
                let doi = &dout.row(r0 + i)[c0..c0 + dh];
                for j in 0..SEQ_LEN {
                    let vj = &v.row(r0 + j)[c0..c0 + dh];
                    dp[j] = doi.iter().zip(vj).map(|(a, b)| a * b).sum();
                    let dvj = &mut dv.row_mut(r0 + j)[c0..c0 + dh];
                    for (g, o) in dvj.iter_mut().zip(doi) {
                        *g += p[j] * o;
                    }
                }
                let dot: f64 = p.iter().zip(&dp).map(|(a, b)| a * b).sum();
                for j in 0..SEQ_LEN {
                    let ds = p[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = &k.row(r0 + j)[c0..c0 + dh];
                    let dqi = &mut dq.row_mut(r0 + i)[c0..c0 + dh];
                    for (g, kt) in dqi.iter_mut().zip(kj) {
                        *g += ds * kt;
                    }
                    let qi = &q.row(r0 + i)[c0..c0 + dh];
                    let dkj = &mut dk.row_mut(r0 + j)[c0..c0 + dh];
                    for (g, qt) in dkj.iter_mut().zip(qi) {
                        *g += ds * qt;
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

fn layer_forward(x: Matrix, p: &EncoderLayerParams, config: &ModelConfig) -> (Matrix, LayerCache) {
    let q = linear(&x, &p.wq, &p.bq);
    let k = linear(&x, &p.wk, &p.bk);
    let v = linear(&x, &p.wv, &p.bv);
    let (attn, probs) = attention_forward(&q, &k, &v, config);
    let mut r1 = linear(&attn, &p.wo, &p.bo);
    r1.add_assign(&x);
    let (a, ln1) = layer_norm_forward(
        &r1,
        p.ln1_gamma.value.as_slice(),
        p.ln1_beta.value.as_slice(),
        LAYER_NORM_EPS,
    );
    let h1 = linear(&a, &p.ffn_w1, &p.ffn_b1);
    let mut g = h1.clone();
    g.as_mut_slice().iter_mut().for_each(|x| *x = gelu(*x));
    let mut r2 = linear(&g, &p.ffn_w2, &p.ffn_b2);
    r2.add_assign(&a);
    let (z, ln2) = layer_norm_forward(
        &r2,
        p.ln2_gamma.value.as_slice(),
        p.ln2_beta.value.as_slice(),
        LAYER_NORM_EPS,
    );
    let cache = LayerCache {
        x,
        q,
        k,
        v,
        probs,
        attn,
        ln1,
        a,
        h1,
        g,
        ln2,
    };
    (z, cache)
}

fn layer_backward(
    dz: &Matrix,
    cache: &LayerCache,
    p: &mut EncoderLayerParams,
    config: &ModelConfig,
) -> Matrix {
    let dr2 = layer_norm_backward(
        dz,
        &cache.ln2,
        p.ln2_gamma.value.as_slice(),
        p.ln2_gamma.grad.as_mut_slice(),
        p.ln2_beta.grad.as_mut_slice(),
    );
    let mut dh1 = linear_backward(&dr2, &cache.g, &mut p.ffn_w2, &mut p.ffn_b2);
    for (d, &h) in dh1.as_mut_slice().iter_mut().zip(cache.h1.as_slice()) {
        *d *= gelu_grad(h);
    }
    let mut da = linear_backward(&dh1, &cache.a, &mut p.ffn_w1, &mut p.ffn_b1);
    da.add_assign(&dr2);
    let dr1 = layer_norm_backward(
        &da,
        &cache.ln1,
        p.ln1_gamma.value.as_slice(),
        p.ln1_gamma.grad.as_mut_slice(),
        p.ln1_beta.grad.as_mut_slice(),
    );
    let dattn = linear_backward(&dr1, &cache.attn, &mut p.wo, &mut p.bo);
    let (dq, dk, dv) = attention_backward(&dattn, cache, config);
    let mut dx = dr1;
    dx.add_assign(&linear_backward(&dq, &cache.x, &mut p.wq, &mut p.bq));
    dx.add_assign(&linear_backward(&dk, &cache.x, &mut p.wk, &mut p.bk));
    dx.add_assign(&linear_backward(&dv, &cache.x, &mut p.wv, &mut p.bv));
    dx
}

fn relu_in_place(m: &mut Matrix) {
    m.as_mut_slice().iter_mut().for_each(|x| *x = x.max(0.0));
}

fn head_forward(
    cls: Matrix,
    head: &HeadParams,
    params: &ModelParams,
    mode: Mode,
) -> Result<(Vec<f64>, HeadCache)> {
    let u1 = linear(&cls, &head.w1, &head.b1);
    let (mut r1, bn1) = batch_norm_forward(
        &u1,
        head.bn1_gamma.value.as_slice(),
        head.bn1_beta.value.as_slice(),
        &params.bn_stats[0],
        mode,
    )?;
    relu_in_place(&mut r1);
    let u2 = linear(&r1, &head.w2, &head.b2);
    let (mut r2, bn2) = batch_norm_forward(
        &u2,
        head.bn2_gamma.value.as_slice(),
        head.bn2_beta.value.as_slice(),
        &params.bn_stats[1],
        mode,
    )?;
    relu_in_place(&mut r2);
    let u3 = linear(&r2, &head.w3, &head.b3);
    let outputs = u3.as_slice().iter().map(|&x| sigmoid(x)).collect();
    Ok((
        outputs,
        HeadCache {
            cls,
            bn1,
            r1,
            bn2,
            r2,
        },
    ))
}

/// Returns `dL/dZ_cls` given `dL/dy` for the sigmoid outputs.
fn head_backward(dy: &[f64], outputs: &[f64], cache: &HeadCache, head: &mut HeadParams) -> Matrix {
    let du3: Vec<f64> = dy
        .iter()
        .zip(outputs)
        .map(|(g, y)| g * y * (1.0 - y))
        .collect();
    let du3 = Matrix::from_vec(du3.len(), 1, du3).expect("non-empty batch");
    let mut dn2 = linear_backward(&du3, &cache.r2, &mut head.w3, &mut head.b3);
    for (d, &r) in dn2.as_mut_slice().iter_mut().zip(cache.r2.as_slice()) {
        if r <= 0.0 {
            *d = 0.0;
        }
    }
    let du2 = batch_norm_backward(
        &dn2,
        &cache.bn2,
        head.bn2_gamma.value.as_slice(),
        head.bn2_gamma.grad.as_mut_slice(),
        head.bn2_beta.grad.as_mut_slice(),
    );
    let mut dn1 = linear_backward(&du2, &cache.r1, &mut head.w2, &mut head.b2);
    for (d, &r) in dn1.as_mut_slice().iter_mut().zip(cache.r1.as_slice()) {
        if r <= 0.0 {
            *d = 0.0;
        }
    }
    let du1 = batch_norm_backward(
        &dn1,
        &cache.bn1,
        head.bn1_gamma.value.as_slice(),
        head.bn1_gamma.grad.as_mut_slice(),
        head.bn1_beta.grad.as_mut_slice(),
    );
    linear_backward(&du1, &cache.cls, &mut head.w1, &mut head.b1)
}

/// Everything after attention: output projection, residual, LN, FFN, LN.
/// `attn` and `x` hold the same rows.
fn post_attention(attn: &Matrix, x: &Matrix, p: &EncoderLayerParams) -> Matrix {
    let mut r1 = linear(attn, &p.wo, &p.bo);
    r1.add_assign(x);
    let (a, _) = layer_norm_forward(
        &r1,
        p.ln1_gamma.value.as_slice(),
        p.ln1_beta.value.as_slice(),
        LAYER_NORM_EPS,
    );
    let mut g = linear(&a, &p.ffn_w1, &p.ffn_b1);
    g.as_mut_slice().iter_mut().for_each(|x| *x = gelu(*x));
    let mut r2 = linear(&g, &p.ffn_w2, &p.ffn_b2);
    r2.add_assign(&a);
    layer_norm_forward(
        &r2,
        p.ln2_gamma.value.as_slice(),
        p.ln2_beta.value.as_slice(),
        LAYER_NORM_EPS,
    )
    .0
}

fn layer_eval(x: Matrix, p: &EncoderLayerParams, config: &ModelConfig) -> Matrix {
    let q = linear(&x, &p.wq, &p.bq);
    let k = linear(&x, &p.wk, &p.bk);
    let v = linear(&x, &p.wv, &p.bv);
    let (attn, _) = attention_forward(&q, &k, &v, config);
    post_attention(&attn, &x, p)
}

fn cls_rows(x: &Matrix) -> Matrix {
    let batch = x.rows() / SEQ_LEN;
    let mut cls = Matrix::zeros(batch, x.cols());
    for b in 0..batch {
        cls.row_mut(b).copy_from_slice(x.row(b * SEQ_LEN));
    }
    cls
}

/// A layer evaluated for the CLS queries only. Returns one row per scene.
fn layer_eval_cls(x: &Matrix, p: &EncoderLayerParams, config: &ModelConfig) -> Matrix {
    let dh = config.head_dim();
    let scale = 1.0 / (dh as f64).sqrt();
    let x_cls = cls_rows(x);
    let q = linear(&x_cls, &p.wq, &p.bq);
    let k = linear(x, &p.wk, &p.bk);
    let v = linear(x, &p.wv, &p.bv);
    let mut attn = Matrix::zeros(q.rows(), q.cols());
    let mut s = [0.0; SEQ_LEN];
    for b in 0..q.rows() {
        let r0 = b * SEQ_LEN;
        for h in 0..config.n_heads {
            let c0 = h * dh;
            let qi = &q.row(b)[c0..c0 + dh];
            for (j, sj) in s.iter_mut().enumerate() {
                let kj = &k.row(r0 + j)[c0..c0 + dh];
                *sj = scale * qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>();
            }
            softmax_in_place(&mut s);
            let o = &mut attn.row_mut(b)[c0..c0 + dh];
            for (j, &pj) in s.iter().enumerate() {
                let vj = &v.row(r0 + j)[c0..c0 + dh];
                for (ot, vt) in o.iter_mut().zip(vj) {
                    *ot += pj * vt;
                }
            }
        }
    }
    post_attention(&attn, &x_cls, p)
}

/// Runs the encoder on `x` and returns its output without keeping caches.
pub fn encode(x: Matrix, params: &ModelParams, config: &ModelConfig) -> Matrix {
    params
        .layers
        .iter()
        .fold(x, |x, layer| layer_eval(x, layer, config))
}

/// Eval-mode sigmoid outputs without saved activations. The last layer
/// only computes the CLS rows the head reads.
pub fn forward_eval(scenes: &[CueTokenSet], params: &ModelParams, config: &ModelConfig) -> Result<Vec<f64>> {
    let (last, rest) = params
        .layers
        .split_last()
        .expect("validated configs have at least one layer");
    let x = rest
        .iter()
        .fold(embed(scenes, params), |x, layer| layer_eval(x, layer, config));
    let cls = layer_eval_cls(&x, last, config);
    Ok(head_forward(cls, &params.head, params, Mode::Eval)?.0)
}

pub fn forward(
    scenes: &[CueTokenSet],
    params: &ModelParams,
    config: &ModelConfig,
    mode: Mode,
) -> Result<ForwardPass> {
    let batch = scenes.len();
    let mut x = embed(scenes, params);
    let mut layers = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (z, cache) = layer_forward(x, layer, config);
        layers.push(cache);
        x = z;
    }
    let (outputs, head) = head_forward(cls_rows(&x), &params.head, params, mode)?;
    Ok(ForwardPass {
        batch,
        inputs: scenes.to_vec(),
        layers,
        head,
        outputs,
    })
}

/// Accumulates parameter gradients given `dL/dy` for each sigmoid output.
pub fn backward(pass: &ForwardPass, dy: &[f64], params: &mut ModelParams, config: &ModelConfig) {
    let dcls = head_backward(dy, &pass.outputs, &pass.head, &mut params.head);
    let d = dcls.cols();
    let mut dz = Matrix::zeros(pass.batch * SEQ_LEN, d);
    for b in 0..pass.batch {
        dz.row_mut(b * SEQ_LEN).copy_from_slice(dcls.row(b));
    }
    for (cache, layer) in pass.layers.iter().zip(params.layers.iter_mut()).rev() {
        dz = layer_backward(&dz, cache, layer, config);
    }
    embed_backward(&dz, &pass.inputs, params);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_derivative_matches_difference() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let num = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((num - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(800.0) <= 1.0);
        assert!((sigmoid(2.0) + sigmoid(-2.0) - 1.0).abs() < 1e-15);
    }
}
