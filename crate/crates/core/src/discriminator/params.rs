use serde::{Deserialize, Serialize};

use crate::cue::NUM_CUES;
use crate::error::{Error, Result};
use crate::numerics::{BatchNormStats, Matrix, ParamSet, ParamTensor};
use crate::rng::SeededRng;

/// Shape of the discriminator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub head_widths: [usize; 2],
    pub score_scale: f64,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d_model: 64,
            n_layers: 4,
            n_heads: 8,
            ffn_dim: 256,
            head_widths: [128, 64],
            score_scale: 10.0,
            seed: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.d_model == 0 || self.n_heads == 0 {
            return err("d_model and n_heads must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return err(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_layers == 0 {
            return err("n_layers must be >= 1".into());
        }
        if self.ffn_dim == 0 || self.head_widths.contains(&0) {
            return err("ffn_dim and head widths must be >= 1".into());
        }
        if !(self.score_scale > 0.0 && self.score_scale.is_finite()) {
            return err(format!("score_scale {} must be positive", self.score_scale));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayerParams {
    pub wq: ParamTensor,
    pub bq: ParamTensor,
    pub wk: ParamTensor,
    pub bk: ParamTensor,
    pub wv: ParamTensor,
    pub bv: ParamTensor,
    pub wo: ParamTensor,
    pub bo: ParamTensor,
    pub ln1_gamma: ParamTensor,
    pub ln1_beta: ParamTensor,
    pub ffn_w1: ParamTensor,
    pub ffn_b1: ParamTensor,
    pub ffn_w2: ParamTensor,
    pub ffn_b2: ParamTensor,
    pub ln2_gamma: ParamTensor,
    pub ln2_beta: ParamTensor,
}

impl EncoderLayerParams {
    fn tensors(&self) -> [&ParamTensor; 16] {
        [
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.ffn_w1,
            &self.ffn_b1,
            &self.ffn_w2,
            &self.ffn_b2,
            &self.ln2_gamma,
            &self.ln2_beta,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 16] {
        [
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.ffn_w1,
            &mut self.ffn_b1,
            &mut self.ffn_w2,
            &mut self.ffn_b2,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
        ]
    }
}

/// Regression head: linear -> BN -> ReLU -> linear -> BN -> ReLU -> linear.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams {
    pub w1: ParamTensor,
    pub b1: ParamTensor,
    pub bn1_gamma: ParamTensor,
    pub bn1_beta: ParamTensor,
    pub w2: ParamTensor,
    pub b2: ParamTensor,
    pub bn2_gamma: ParamTensor,
    pub bn2_beta: ParamTensor,
    pub w3: ParamTensor,
    pub b3: ParamTensor,
}

impl HeadParams {
    fn tensors(&self) -> [&ParamTensor; 10] {
        [
            &self.w1,
            &self.b1,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.w2,
            &self.b2,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.w3,
            &self.b3,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut ParamTensor; 10] {
        [
            &mut self.w1,
            &mut self.b1,
            &mut self.bn1_gamma,
            &mut self.bn1_beta,
            &mut self.w2,
            &mut self.b2,
            &mut self.bn2_gamma,
            &mut self.bn2_beta,
            &mut self.w3,
            &mut self.b3,
        ]
    }
}

/// Every learnable tensor of the discriminator plus the batch-norm running
/// statistics of the head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// Token embedding, `d x 2`: `x_i = W_e t_i + b_e`.
    pub embed_w: ParamTensor,
    pub embed_b: ParamTensor,
    pub pos: ParamTensor,
    pub cue_type: ParamTensor,
    pub cls: ParamTensor,
    pub layers: Vec<EncoderLayerParams>,
    pub head: HeadParams,
    pub bn_stats: [BatchNormStats; 2],
}

fn glorot(name: String, fan_in: usize, fan_out: usize, rng: &mut SeededRng) -> ParamTensor {
    let bound = glorot_bound(fan_in, fan_out);
    let data = (0..fan_in * fan_out)
        .map(|_| rng.uniform_range(-bound, bound))
        .collect();
    ParamTensor::new(name, Matrix::from_vec(fan_in, fan_out, data).expect("nonzero shape"))
}

pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

fn ones(name: String, n: usize) -> ParamTensor {
    ParamTensor::new(name, Matrix::filled(1, n, 1.0))
}

fn zeros(name: String, n: usize) -> ParamTensor {
    ParamTensor::zeros(name, 1, n)
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases and embeddings, unit norm scales.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let d = config.d_model;
        let f = config.ffn_dim;
        let [h1, h2] = config.head_widths;
        let mut rng = SeededRng::new(config.seed);

        // W_e is stored d x 2 (out x in); everything else is in x out.
        let mut embed_w = glorot("embed.w".into(), 2, d, &mut rng);
        embed_w.value = embed_w.value.transpose();
        embed_w.grad = Matrix::zeros(d, 2);
        embed_w.adam_m = Matrix::zeros(d, 2);
        embed_w.adam_v = Matrix::zeros(d, 2);
        let cls = glorot("embed.cls".into(), 1, d, &mut rng);

        let layers = (0..config.n_layers)
            .map(|l| {
                let n = |s: &str| format!("layer{l}.{s}");
                EncoderLayerParams {
                    wq: glorot(n("wq"), d, d, &mut rng),
                    bq: zeros(n("bq"), d),
                    wk: glorot(n("wk"), d, d, &mut rng),
                    bk: zeros(n("bk"), d),
                    wv: glorot(n("wv"), d, d, &mut rng),
                    bv: zeros(n("bv"), d),
                    wo: glorot(n("wo"), d, d, &mut rng),
                    bo: zeros(n("bo"), d),
                    ln1_gamma: ones(n("ln1.gamma"), d),
                    ln1_beta: zeros(n("ln1.beta"), d),
                    ffn_w1: glorot(n("ffn.w1"), d, f, &mut rng),
                    ffn_b1: zeros(n("ffn.b1"), f),
                    ffn_w2: glorot(n("ffn.w2"), f, d, &mut rng),
                    ffn_b2: zeros(n("ffn.b2"), d),
                    ln2_gamma: ones(n("ln2.gamma"), d),
                    ln2_beta: zeros(n("ln2.beta"), d),
                }
            })
            .collect();

        let head = HeadParams {
            w1: glorot("head.w1".into(), d, h1, &mut rng),
            b1: zeros("head.b1".into(), h1),
            bn1_gamma: ones("head.bn1.gamma".into(), h1),
            bn1_beta: zeros("head.bn1.beta".into(), h1),
            w2: glorot("head.w2".into(), h1, h2, &mut rng),
            b2: zeros("head.b2".into(), h2),
            bn2_gamma: ones("head.bn2.gamma".into(), h2),
            bn2_beta: zeros("head.bn2.beta".into(), h2),
            w3: glorot("head.w3".into(), h2, 1, &mut rng),
            b3: zeros("head.b3".into(), 1),
        };

        Ok(ModelParams {
            embed_w,
            embed_b: zeros("embed.b".into(), d),
            pos: ParamTensor::zeros("embed.pos", NUM_CUES, d),
            cue_type: ParamTensor::zeros("embed.cue_type", NUM_CUES, d),
            cls,
            layers,
            head,
            bn_stats: [BatchNormStats::new(h1), BatchNormStats::new(h2)],
        })
    }

    /// Expected `(name, shape)` of every tensor for `config`, in canonical order.
    pub fn expected_shapes(config: &ModelConfig) -> Vec<(String, (usize, usize))> {
        let d = config.d_model;
        let f = config.ffn_dim;
        let [h1, h2] = config.head_widths;
        let mut out = vec![
            ("embed.w".to_string(), (d, 2)),
            ("embed.b".to_string(), (1, d)),
            ("embed.pos".to_string(), (NUM_CUES, d)),
            ("embed.cue_type".to_string(), (NUM_CUES, d)),
            ("embed.cls".to_string(), (1, d)),
        ];
        for l in 0..config.n_layers {
            for (s, shape) in [
                ("wq", (d, d)),
                ("bq", (1, d)),
                ("wk", (d, d)),
                ("bk", (1, d)),
                ("wv", (d, d)),
                ("bv", (1, d)),
                ("wo", (d, d)),
                ("bo", (1, d)),
                ("ln1.gamma", (1, d)),
                ("ln1.beta", (1, d)),
                ("ffn.w1", (d, f)),
                ("ffn.b1", (1, f)),
                ("ffn.w2", (f, d)),
                ("ffn.b2", (1, d)),
                ("ln2.gamma", (1, d)),
                ("ln2.beta", (1, d)),
            ] {
                out.push((format!("layer{l}.{s}"), shape));
            }
        }
        out.extend([
            ("head.w1".to_string(), (d, h1)),
            ("head.b1".to_string(), (1, h1)),
            ("head.bn1.gamma".to_string(), (1, h1)),
            ("head.bn1.beta".to_string(), (1, h1)),
            ("head.w2".to_string(), (h1, h2)),
            ("head.b2".to_string(), (1, h2)),
            ("head.bn2.gamma".to_string(), (1, h2)),
            ("head.bn2.beta".to_string(), (1, h2)),
            ("head.w3".to_string(), (h2, 1)),
            ("head.b3".to_string(), (1, 1)),
        ]);
        out
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.value.is_finite())
            && self
                .bn_stats
                .iter()
                .all(|s| s.mean.iter().chain(&s.var).all(|x| x.is_finite()))
    }
}

impl ParamSet for ModelParams {
    fn params(&self) -> Vec<&ParamTensor> {
        let mut out = vec![
            &self.embed_w,
            &self.embed_b,
            &self.pos,
            &self.cue_type,
            &self.cls,
        ];
        for layer in &self.layers {
            out.extend(layer.tensors());
        }
        out.extend(self.head.tensors());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut ParamTensor> {
        let mut out = vec![
            &mut self.embed_w,
            &mut self.embed_b,
            &mut self.pos,
            &mut self.cue_type,
            &mut self.cls,
        ];
        for layer in &mut self.layers {
            out.extend(layer.tensors_mut());
        }
        out.extend(self.head.tensors_mut());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_bit_identical() {
        let c = ModelConfig {
            seed: 11,
            ..ModelConfig::default()
        };
        assert_eq!(ModelParams::init(&c).unwrap(), ModelParams::init(&c).unwrap());
        let other = ModelParams::init(&ModelConfig { seed: 12, ..c }).unwrap();
        assert_ne!(other.head.w1.value, ModelParams::init(&ModelConfig::default()).unwrap().head.w1.value);
    }

    #[test]
    fn indivisible_heads_rejected() {
        let c = ModelConfig {
            d_model: 63,
            ..ModelConfig::default()
        };
        assert!(matches!(ModelParams::init(&c), Err(Error::Config(_))));
    }

    #[test]
    fn weights_respect_glorot_bound() {
        let p = ModelParams::init(&ModelConfig::default()).unwrap();
        assert!(p.embed_w.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(2, 64)));
        assert!(p.cls.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(1, 64)));
        for l in &p.layers {
            for w in [&l.wq, &l.wk, &l.wv, &l.wo] {
                assert!(w.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(64, 64)));
            }
            assert!(l.ffn_w1.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(64, 256)));
            assert!(l.ffn_w2.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(256, 64)));
            assert!(l.bq.value.as_slice().iter().all(|&x| x == 0.0));
        }
        assert!(p.head.w3.value.as_slice().iter().all(|x| x.abs() <= glorot_bound(64, 1)));
        assert!(p.pos.value.as_slice().iter().all(|&x| x == 0.0));
        assert!(p.cue_type.value.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn shapes_follow_config() {
        let c = ModelConfig::default();
        let p = ModelParams::init(&c).unwrap();
        let expected = ModelParams::expected_shapes(&c);
        let actual: Vec<(String, (usize, usize))> =
            p.params().iter().map(|t| (t.name.clone(), t.shape())).collect();
        assert_eq!(actual, expected);
        for t in p.params() {
            assert_eq!(t.grad.shape(), t.shape());
            assert_eq!(t.adam_m.shape(), t.shape());
        }
    }
}
