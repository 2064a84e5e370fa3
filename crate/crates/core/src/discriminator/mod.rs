//! Transformer fusion network that maps five cue tokens to a risk score.
//!
//! Tokens are embedded linearly, offset by learned positional and cue-type
//! vectors, and prefixed with a learned CLS vector. A post-norm encoder
//! (self-attention then GELU feed-forward, each followed by a residual add
//! and layer norm) mixes the six rows. The CLS row feeds a small regression
//! head with batch norm and a final sigmoid; the score is the sigmoid output
//! times `score_scale`.

mod checkpoint;
mod forward;
mod params;

use serde::Serialize;

pub use checkpoint::{CheckpointFile, TensorRecord, CHECKPOINT_VERSION};
pub use forward::{ForwardPass, SEQ_LEN};
pub use params::{glorot_bound, EncoderLayerParams, HeadParams, ModelConfig, ModelParams};

use crate::cue::{quantize, CueTokenSet, RiskBand};
use crate::error::{Error, Result};
use crate::numerics::{Matrix, Mode, ParamSet};

/// Scenes per forward chunk when scoring large sets.
const EVAL_CHUNK: usize = 128;

/// Anything that scores scenes on the 0-10 risk scale. Explainers and the
/// robustness harness only see this interface.
pub trait RiskModel {
    fn scores(&self, scenes: &[CueTokenSet]) -> Vec<f64>;

    fn score(&self, scene: &CueTokenSet) -> f64 {
        self.scores(std::slice::from_ref(scene))[0]
    }
}

/// Adapts a plain function into a [`RiskModel`].
pub struct FnModel<F>(pub F);

impl<F: Fn(&CueTokenSet) -> f64> RiskModel for FnModel<F> {
    fn scores(&self, scenes: &[CueTokenSet]) -> Vec<f64> {
        scenes.iter().map(&self.0).collect()
    }
}

/// Attention weights of one head: rows are queries (CLS first), columns keys.
pub type AttentionMap = [[f64; SEQ_LEN]; SEQ_LEN];

#[derive(Debug, Clone, Serialize)]
pub struct RiskPrediction {
    pub normalized: f64,
    pub score: f64,
    pub band: RiskBand,
    /// `[layer][head]` attention maps, when requested.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention: Option<Vec<Vec<AttentionMap>>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub config: ModelConfig,
    pub params: ModelParams,
}

impl Discriminator {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = ModelParams::init(&config)?;
        Ok(Discriminator { config, params })
    }

    /// Embedded token matrix (`6 x d`) for one scene.
    pub fn embed(&self, scene: &CueTokenSet) -> Matrix {
        forward::embed(std::slice::from_ref(scene), &self.params)
    }

    /// Encoder output for a stack of `6 x d` blocks.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.config.d_model || !x.rows().is_multiple_of(SEQ_LEN) {
            return Err(Error::Shape(format!(
                "encoder expects {SEQ_LEN}k x {} input, got {}x{}",
                self.config.d_model,
                x.rows(),
                x.cols()
            )));
        }
        Ok(forward::encode(x.clone(), &self.params, &self.config))
    }

    pub fn forward(&self, scenes: &[CueTokenSet], mode: Mode) -> Result<ForwardPass> {
        if scenes.is_empty() {
            return Err(Error::Validation("empty batch".into()));
        }
        forward::forward(scenes, &self.params, &self.config, mode)
    }

    fn to_prediction(&self, normalized: f64) -> Result<RiskPrediction> {
        let score = self.config.score_scale * normalized;
        let band = quantize(score.min(10.0))?;
        Ok(RiskPrediction {
            normalized,
            score,
            band,
            attention: None,
        })
    }

    /// Scores one scene. Train mode needs batch statistics and is rejected.
    pub fn predict(&self, scene: &CueTokenSet, mode: Mode, with_attention: bool) -> Result<RiskPrediction> {
        if mode == Mode::Train {
            return Err(Error::Domain(
                "single-scene prediction has no batch statistics; use eval mode".into(),
            ));
        }
        scene.validate()?;
        let pass = self.forward(std::slice::from_ref(scene), Mode::Eval)?;
        let mut pred = self.to_prediction(pass.outputs[0])?;
        if with_attention {
            pred.attention = Some(pass.attention(0, self.config.n_heads));
        }
        Ok(pred)
    }

    /// Eval-mode sigmoid outputs in `(0, 1)`.
    pub fn predict_normalized(&self, scenes: &[CueTokenSet]) -> Vec<f64> {
        let mut out = Vec::with_capacity(scenes.len());
        for chunk in scenes.chunks(EVAL_CHUNK) {
            out.extend(
                forward::forward_eval(chunk, &self.params, &self.config)
                    .expect("eval mode forward is infallible"),
            );
        }
        out
    }

    /// Mean squared error against normalized targets, with gradients
    /// accumulated into every tensor. Train mode also folds the batch
    /// moments into the running statistics.
    pub fn loss_and_grads(&mut self, batch: &[CueTokenSet], targets: &[f64], mode: Mode) -> Result<f64> {
        if batch.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} scenes but {} targets",
                batch.len(),
                targets.len()
            )));
        }
        let pass = self.forward(batch, mode)?;
        let n = batch.len() as f64;
        let loss = pass
            .outputs
            .iter()
            .zip(targets)
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>()
            / n;
        if !loss.is_finite() {
            let bad = pass.outputs.iter().filter(|y| !y.is_finite()).count();
            return Err(Error::NonFinite(format!(
                "loss over batch of {} ({bad} non-finite outputs)",
                batch.len()
            )));
        }
        if let [Some(m1), Some(m2)] = pass.batch_moments() {
            let (m1, m2) = (m1.clone(), m2.clone());
            self.params.bn_stats[0].update(&m1);
            self.params.bn_stats[1].update(&m2);
        }
        let dy: Vec<f64> = pass
            .outputs
            .iter()
            .zip(targets)
            .map(|(y, t)| 2.0 * (y - t) / n)
            .collect();
        forward::backward(&pass, &dy, &mut self.params, &self.config);
        Ok(loss)
    }

    /// Eval-mode loss without touching gradients.
    pub fn eval_loss(&self, batch: &[CueTokenSet], targets: &[f64]) -> f64 {
        let out = self.predict_normalized(batch);
        out.iter()
            .zip(targets)
            .map(|(y, t)| (y - t) * (y - t))
            .sum::<f64>()
            / batch.len() as f64
    }

    pub fn zero_grads(&mut self) {
        self.params.zero_grads();
    }
}

impl RiskModel for Discriminator {
    fn scores(&self, scenes: &[CueTokenSet]) -> Vec<f64> {
        self.predict_normalized(scenes)
            .into_iter()
            .map(|y| y * self.config.score_scale)
            .collect()
    }
}

impl ParamSet for Discriminator {
    fn params(&self) -> Vec<&crate::numerics::ParamTensor> {
        self.params.params()
    }

    fn params_mut(&mut self) -> Vec<&mut crate::numerics::ParamTensor> {
        self.params.params_mut()
    }
}
