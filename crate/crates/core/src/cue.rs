//! Cue vocabulary, tokenization of raw detection summaries, and risk bands.
//!
//! A scene is summarized by five cues in a fixed order. Each cue becomes a
//! token `(v, c)`: the detection count scaled into `[0, 1]` by a per-cue cap,
//! and the aggregated detection confidence.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NUM_CUES: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CueKind {
    Person,
    Emotion,
    Weapon,
    Fire,
    BodyLanguage,
}

impl CueKind {
    pub const ALL: [CueKind; NUM_CUES] = [
        CueKind::Person,
        CueKind::Emotion,
        CueKind::Weapon,
        CueKind::Fire,
        CueKind::BodyLanguage,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<CueKind> {
        Self::ALL.get(i).copied()
    }

    /// Short column name used in CSV headers (`nm_p`, `nm_em`, ...).
    pub fn short_name(self) -> &'static str {
        match self {
            CueKind::Person => "p",
            CueKind::Emotion => "em",
            CueKind::Weapon => "wp",
            CueKind::Fire => "f",
            CueKind::BodyLanguage => "bl",
        }
    }

    /// Display label, e.g. `Nm_Wp`.
    pub fn label(self) -> &'static str {
        match self {
            CueKind::Person => "Nm_P",
            CueKind::Emotion => "Nm_Em",
            CueKind::Weapon => "Nm_Wp",
            CueKind::Fire => "Nm_F",
            CueKind::BodyLanguage => "Nm_BL",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CueKind::Person => "person",
            CueKind::Emotion => "emotion",
            CueKind::Weapon => "weapon",
            CueKind::Fire => "fire",
            CueKind::BodyLanguage => "body_language",
        }
    }
}

impl fmt::Display for CueKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Per-cue normalization caps: a count at or above the cap maps to `v = 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CueCaps {
    pub person: u32,
    pub emotion: u32,
    pub weapon: u32,
    pub fire: u32,
    pub body_language: u32,
}

impl Default for CueCaps {
    fn default() -> Self {
        CueCaps {
            person: 50,
            emotion: 20,
            weapon: 5,
            fire: 3,
            body_language: 20,
        }
    }
}

impl CueCaps {
    pub fn as_array(&self) -> [u32; NUM_CUES] {
        [
            self.person,
            self.emotion,
            self.weapon,
            self.fire,
            self.body_language,
        ]
    }

    pub fn get(&self, kind: CueKind) -> u32 {
        self.as_array()[kind.index()]
    }

    pub fn validate(&self) -> Result<()> {
        for kind in CueKind::ALL {
            if self.get(kind) == 0 {
                return Err(Error::Config(format!("cap for {kind} must be >= 1")));
            }
        }
        Ok(())
    }
}

/// One scene as reported by the upstream detectors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawSceneObservation {
    pub scene_id: String,
    pub counts: [u32; NUM_CUES],
    pub confidences: [f64; NUM_CUES],
    pub label: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CueToken {
    pub v: f64,
    pub c: f64,
}

impl CueToken {
    pub const ZERO: CueToken = CueToken { v: 0.0, c: 0.0 };

    pub fn new(v: f64, c: f64) -> Self {
        CueToken { v, c }
    }

    pub fn is_valid(&self) -> bool {
        (0.0..=1.0).contains(&self.v) && (0.0..=1.0).contains(&self.c)
    }

    /// Clamp both components into `[0, 1]`.
    pub fn clamped(self) -> Self {
        CueToken {
            v: self.v.clamp(0.0, 1.0),
            c: self.c.clamp(0.0, 1.0),
        }
    }
}

/// The five cue tokens of a scene in canonical [`CueKind`] order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CueTokenSet {
    pub tokens: [CueToken; NUM_CUES],
}

impl CueTokenSet {
    pub const ZERO: CueTokenSet = CueTokenSet {
        tokens: [CueToken::ZERO; NUM_CUES],
    };

    pub fn new(tokens: [CueToken; NUM_CUES]) -> Self {
        CueTokenSet { tokens }
    }

    pub fn get(&self, kind: CueKind) -> CueToken {
        self.tokens[kind.index()]
    }

    pub fn set(&mut self, kind: CueKind, token: CueToken) {
        self.tokens[kind.index()] = token;
    }

    pub fn values(&self) -> [f64; NUM_CUES] {
        self.tokens.map(|t| t.v)
    }

    pub fn validate(&self) -> Result<()> {
        for (kind, t) in CueKind::ALL.iter().zip(&self.tokens) {
            if !t.is_valid() {
                return Err(Error::Validation(format!(
                    "{kind} token ({}, {}) outside [0,1]",
                    t.v, t.c
                )));
            }
        }
        Ok(())
    }
}

impl std::ops::Index<CueKind> for CueTokenSet {
    type Output = CueToken;

    fn index(&self, kind: CueKind) -> &CueToken {
        &self.tokens[kind.index()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RiskBand {
    Low,
    Medium,
    High,
}

impl RiskBand {
    pub const ALL: [RiskBand; 3] = [RiskBand::Low, RiskBand::Medium, RiskBand::High];

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for RiskBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            RiskBand::Low => "Low",
            RiskBand::Medium => "Medium",
            RiskBand::High => "High",
        };
        f.write_str(s)
    }
}

pub const MEDIUM_THRESHOLD: f64 = 3.5;
pub const HIGH_THRESHOLD: f64 = 6.5;

/// Map a risk score on the 0-10 scale to its band. Boundaries are half-open:
/// `[0, 3.5)` Low, `[3.5, 6.5)` Medium, `[6.5, 10]` High.
pub fn quantize(score: f64) -> Result<RiskBand> {
    if !score.is_finite() || !(0.0..=10.0).contains(&score) {
        return Err(Error::Domain(format!("risk score {score} not in [0,10]")));
    }
    Ok(if score < MEDIUM_THRESHOLD {
        RiskBand::Low
    } else if score < HIGH_THRESHOLD {
        RiskBand::Medium
    } else {
        RiskBand::High
    })
}

pub fn tokenize(raw: &RawSceneObservation, caps: &CueCaps) -> Result<CueTokenSet> {
    caps.validate()?;
    let caps = caps.as_array();
    let mut tokens = [CueToken::ZERO; NUM_CUES];
    for (k, kind) in CueKind::ALL.into_iter().enumerate() {
        let conf = raw.confidences[k];
        if !conf.is_finite() || !(0.0..=1.0).contains(&conf) {
            return Err(Error::Validation(format!(
                "scene {}: {kind} confidence {conf} outside [0,1]",
                raw.scene_id
            )));
        }
        let cap = caps[k];
        tokens[k] = CueToken {
            v: f64::from(raw.counts[k].min(cap)) / f64::from(cap),
            c: conf,
        };
    }
    Ok(CueTokenSet { tokens })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub cue: Option<CueKind>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.cue {
            Some(c) => write!(f, "{c}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Every invariant violation of a raw observation; empty when well-formed.
pub fn validate(raw: &RawSceneObservation) -> Vec<Violation> {
    let mut out = Vec::new();
    for (k, kind) in CueKind::ALL.into_iter().enumerate() {
        let conf = raw.confidences[k];
        if !conf.is_finite() || !(0.0..=1.0).contains(&conf) {
            out.push(Violation {
                cue: Some(kind),
                message: format!("confidence {conf} out of range"),
            });
        } else if raw.counts[k] == 0 && conf != 0.0 {
            out.push(Violation {
                cue: Some(kind),
                message: "confidence without detections".to_string(),
            });
        }
    }
    if let Some(label) = raw.label {
        if !label.is_finite() || !(0.0..=10.0).contains(&label) {
            out.push(Violation {
                cue: None,
                message: format!("label out of range ({label})"),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn raw(counts: [u32; 5], confidences: [f64; 5]) -> RawSceneObservation {
        RawSceneObservation {
            scene_id: "s".into(),
            counts,
            confidences,
            label: None,
        }
    }

    #[test]
    fn canonical_order() {
        let idx: Vec<usize> = CueKind::ALL.iter().map(|k| k.index()).collect();
        assert_eq!(idx, vec![0, 1, 2, 3, 4]);
        assert_eq!(CueKind::from_index(2), Some(CueKind::Weapon));
        assert_eq!(CueKind::from_index(5), None);
    }

    #[test]
    fn tokenize_zero_scene() {
        let t = tokenize(&raw([0; 5], [0.0; 5]), &CueCaps::default()).unwrap();
        assert_eq!(t, CueTokenSet::ZERO);
    }

    #[test]
    fn tokenize_saturates_at_cap() {
        let caps = CueCaps::default();
        let t = tokenize(&raw([50, 20, 5, 3, 20], [1.0; 5]), &caps).unwrap();
        assert!(t.tokens.iter().all(|t| t.v == 1.0));
        let t = tokenize(&raw([500, 21, 9, 4, 99], [1.0; 5]), &caps).unwrap();
        assert!(t.tokens.iter().all(|t| t.v == 1.0));
    }

    #[test]
    fn tokenize_person_half_cap() {
        let t = tokenize(
            &raw([25, 0, 0, 0, 0], [0.8, 0.0, 0.0, 0.0, 0.0]),
            &CueCaps::default(),
        )
        .unwrap();
        assert_eq!(t[CueKind::Person], CueToken::new(0.5, 0.8));
    }

    #[test]
    fn tokenize_rejects_bad_confidence_naming_cue() {
        let err = tokenize(
            &raw([1, 1, 1, 1, 1], [0.5, 0.5, 1.2, 0.5, 0.5]),
            &CueCaps::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("weapon"), "{err}");
    }

    #[test]
    fn tokenize_rejects_zero_cap() {
        let caps = CueCaps {
            fire: 0,
            ..CueCaps::default()
        };
        assert!(matches!(
            tokenize(&raw([0; 5], [0.0; 5]), &caps),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn quantize_band_boundaries() {
        assert_eq!(quantize(2.0).unwrap(), RiskBand::Low);
        assert_eq!(quantize(5.0).unwrap(), RiskBand::Medium);
        assert_eq!(quantize(9.0).unwrap(), RiskBand::High);
        assert_eq!(quantize(3.5).unwrap(), RiskBand::Medium);
        assert_eq!(quantize(6.5).unwrap(), RiskBand::High);
        assert_eq!(quantize(0.0).unwrap(), RiskBand::Low);
        assert_eq!(quantize(10.0).unwrap(), RiskBand::High);
    }

    #[test]
    fn quantize_rejects_out_of_domain() {
        assert!(quantize(f64::NAN).is_err());
        assert!(quantize(-0.1).is_err());
        assert!(quantize(10.01).is_err());
    }

    #[test]
    fn validate_reports_each_violation() {
        let mut r = raw([0, 1, 1, 1, 1], [0.9, 0.5, 0.5, 0.5, 0.5]);
        let v = validate(&r);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].cue, Some(CueKind::Person));
        assert_eq!(v[0].message, "confidence without detections");

        r.label = Some(11.2);
        let v = validate(&r);
        assert_eq!(v.len(), 2);
        assert!(v[1].message.starts_with("label out of range"));

        let ok = RawSceneObservation {
            label: Some(4.0),
            ..raw([3, 1, 0, 0, 1], [0.9, 0.7, 0.0, 0.0, 0.8])
        };
        assert!(validate(&ok).is_empty());
    }

    proptest! {
        #[test]
        fn tokenize_is_monotone(
            counts in proptest::array::uniform5(0u32..80),
            k in 0usize..5,
            bump in 1u32..30,
        ) {
            let caps = CueCaps::default();
            let a = tokenize(&raw(counts, [0.5; 5]), &caps).unwrap();
            let mut more = counts;
            more[k] += bump;
            let b = tokenize(&raw(more, [0.5; 5]), &caps).unwrap();
            prop_assert!(b.tokens[k].v >= a.tokens[k].v);
            prop_assert!(b.validate().is_ok());
        }

        #[test]
        fn quantize_partitions_range(score in 0.0f64..=10.0) {
            let band = quantize(score).unwrap();
            let hits = [
                score < 3.5,
                (3.5..6.5).contains(&score),
                score >= 6.5,
            ];
            prop_assert_eq!(hits.iter().filter(|h| **h).count(), 1);
            prop_assert!(hits[band.index()]);
        }
    }
}
