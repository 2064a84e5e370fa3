//! Cue-fusion discriminator for scene suspiciousness scoring.
//!
//! Five detector-level cues (people, suspicious emotions, weapons, fire,
//! abnormal body language) are tokenized, fused by a small transformer
//! encoder, and regressed to a 0-10 risk score. Around the model sit a
//! seeded synthetic scene generator, a training loop with early stopping,
//! an explainability stack built on exact Shapley values, and a perturbation
//! harness.

pub mod cue;
pub mod discriminator;
pub mod error;
pub mod explain;
pub mod numerics;
pub mod robustness;
pub mod rng;
pub mod synthetic;
pub mod training;

pub use error::{CheckpointError, Error, Result};
