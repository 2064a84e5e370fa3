//! Detector-output ingest format.
//!
//! ```json
//! {"scene_id": "cam3-000117",
//!  "detections": [{"kind": "person", "confidence": 0.91}, {"kind": "weapon", "confidence": 0.72}],
//!  "faces": [{"emotion": "anger", "confidence": 0.66}],
//!  "body": [{"state": "abnormal", "confidence": 0.8}]}
//! ```
//!
//! Person, weapon and fire counts come from `detections` (`face` boxes are
//! accepted and ignored). The emotion cue counts faces showing anger, fear
//! or disgust; the body-language cue counts abnormal states. A cue's
//! confidence is the mean confidence of the items it counts.

use dusev_core::cue::{CueKind, RawSceneObservation, NUM_CUES};
use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectionKind {
    Person,
    Face,
    Weapon,
    Fire,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Detection {
    pub kind: DetectionKind,
    pub confidence: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Face {
    pub emotion: String,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BodyState {
    Normal,
    Abnormal,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Body {
    pub state: BodyState,
    pub confidence: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneDetections {
    pub scene_id: String,
    #[serde(default)]
    pub detections: Vec<Detection>,
    #[serde(default)]
    pub faces: Vec<Face>,
    #[serde(default)]
    pub body: Vec<Body>,
}

pub const SUSPICIOUS_EMOTIONS: [&str; 3] = ["anger", "fear", "disgust"];

impl SceneDetections {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| CliError::Validation(format!("detections: {e}")))
    }

    pub fn to_observation(&self) -> Result<RawSceneObservation, CliError> {
        let mut counted: [Vec<f64>; NUM_CUES] = Default::default();
        let check = |what: &str, c: f64| {
            if (0.0..=1.0).contains(&c) {
                Ok(c)
            } else {
                Err(CliError::Validation(format!("{what} confidence {c} outside [0, 1]")))
            }
        };
        for d in &self.detections {
            let c = check("detection", d.confidence)?;
            let kind = match d.kind {
                DetectionKind::Person => CueKind::Person,
                DetectionKind::Weapon => CueKind::Weapon,
                DetectionKind::Fire => CueKind::Fire,
                DetectionKind::Face => continue,
            };
            counted[kind.index()].push(c);
        }
        for f in &self.faces {
            let c = check("face", f.confidence)?;
            if SUSPICIOUS_EMOTIONS.contains(&f.emotion.to_ascii_lowercase().as_str()) {
                counted[CueKind::Emotion.index()].push(c);
            }
        }
        for b in &self.body {
            let c = check("body", b.confidence)?;
            if b.state == BodyState::Abnormal {
                counted[CueKind::BodyLanguage.index()].push(c);
            }
        }
        let mut counts = [0u32; NUM_CUES];
        let mut confidences = [0.0; NUM_CUES];
        for k in 0..NUM_CUES {
            let items = &counted[k];
            counts[k] = items.len() as u32;
            if !items.is_empty() {
                confidences[k] = items.iter().sum::<f64>() / items.len() as f64;
            }
        }
        Ok(RawSceneObservation {
            scene_id: self.scene_id.clone(),
            counts,
            confidences,
            label: None,
        })
    }
}
