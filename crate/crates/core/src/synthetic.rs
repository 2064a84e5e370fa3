//! Seeded synthetic scenes labeled by a documented risk function.
//!
//! Counts are drawn from simple prevalence models and labeled with
//! [`oracle_risk`]: a base level, positive main effects ranked
//! weapon > fire > body language > emotion > person, and three positive
//! pairwise synergies (weapon x emotion, weapon x body language,
//! emotion x fire), plus Gaussian label noise.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Read};

use serde::{Deserialize, Serialize};

use crate::cue::{
    quantize, tokenize, CueCaps, CueKind, CueTokenSet, RawSceneObservation, RiskBand, NUM_CUES,
};
use crate::error::{Error, Result};
use crate::rng::SeededRng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Prevalence {
    pub p_weapon: f64,
    pub p_fire: f64,
    pub person_rate: f64,
    pub em_rate: f64,
    pub bl_rate: f64,
}

impl Default for Prevalence {
    fn default() -> Self {
        Prevalence {
            p_weapon: 0.15,
            p_fire: 0.05,
            person_rate: 8.0,
            em_rate: 0.10,
            bl_rate: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GeneratorConfig {
    pub n_scenes: usize,
    pub seed: u64,
    pub prevalence: Prevalence,
    pub label_noise_sigma: f64,
    pub caps: CueCaps,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_scenes: 10_000,
            seed: 42,
            prevalence: Prevalence::default(),
            label_noise_sigma: 0.15,
            caps: CueCaps::default(),
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let p = &self.prevalence;
        for (name, prob) in [("p_weapon", p.p_weapon), ("p_fire", p.p_fire)] {
            if !(0.0..=1.0).contains(&prob) {
                return Err(Error::Config(format!("{name} = {prob} is not a probability")));
            }
        }
        for (name, rate) in [("em_rate", p.em_rate), ("bl_rate", p.bl_rate)] {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::Config(format!("{name} = {rate} must lie in (0, 1]")));
            }
        }
        if !(p.person_rate > 0.0 && p.person_rate.is_finite()) {
            return Err(Error::Config("person_rate must be positive".into()));
        }
        if !(self.label_noise_sigma >= 0.0 && self.label_noise_sigma.is_finite()) {
            return Err(Error::Config("label_noise_sigma must be >= 0".into()));
        }
        if self.n_scenes == 0 {
            return Err(Error::Config("n_scenes must be >= 1".into()));
        }
        self.caps.validate()
    }
}

/// Coefficients of the labeling function, applied to normalized cue values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCoefficients {
    pub base: f64,
    pub weapon: f64,
    pub fire: f64,
    pub body_language: f64,
    pub emotion: f64,
    pub person: f64,
    pub weapon_emotion: f64,
    pub weapon_body_language: f64,
    pub emotion_fire: f64,
}

impl Default for OracleCoefficients {
    fn default() -> Self {
        OracleCoefficients {
            base: 1.5,
            weapon: 3.0,
            fire: 2.0,
            body_language: 1.8,
            emotion: 1.0,
            person: 0.5,
            weapon_emotion: 2.5,
            weapon_body_language: 2.0,
            emotion_fire: 1.2,
        }
    }
}

impl OracleCoefficients {
    /// Risk before noise and clamping.
    pub fn raw(&self, tokens: &CueTokenSet) -> f64 {
        let v = tokens.values();
        let [p, em, wp, f, bl] = v;
        self.base
            + self.weapon * wp
            + self.fire * f
            + self.body_language * bl
            + self.emotion * em
            + self.person * p
            + self.weapon_emotion * wp * em
            + self.weapon_body_language * wp * bl
            + self.emotion_fire * em * f
    }

    /// The interacting pairs, in the order weapon-emotion, weapon-body
    /// language, emotion-fire.
    pub fn interaction_pairs(&self) -> [((CueKind, CueKind), f64); 3] {
        [
            ((CueKind::Emotion, CueKind::Weapon), self.weapon_emotion),
            ((CueKind::Weapon, CueKind::BodyLanguage), self.weapon_body_language),
            ((CueKind::Emotion, CueKind::Fire), self.emotion_fire),
        ]
    }
}

/// Risk label for a token set with noise draw `eps`, clamped to `[0, 10]`.
pub fn oracle_risk(tokens: &CueTokenSet, eps: f64) -> f64 {
    (OracleCoefficients::default().raw(tokens) + eps).clamp(0.0, 10.0)
}

/// One labeled scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRecord {
    pub scene_id: String,
    pub counts: [u32; NUM_CUES],
    pub confidences: [f64; NUM_CUES],
    pub risk: f64,
}

impl SceneRecord {
    pub fn observation(&self) -> RawSceneObservation {
        RawSceneObservation {
            scene_id: self.scene_id.clone(),
            counts: self.counts,
            confidences: self.confidences,
            label: Some(self.risk),
        }
    }

    pub fn tokens(&self, caps: &CueCaps) -> Result<CueTokenSet> {
        tokenize(&self.observation(), caps)
    }
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

/// Draws one unlabeled scene. Draw order is fixed: persons, weapons, fire,
/// emotions, body language, then one confidence per present cue.
pub fn sample_scene(rng: &mut SeededRng, prevalence: &Prevalence, caps: &CueCaps) -> RawSceneObservation {
    let persons = rng.poisson(prevalence.person_rate).min(u64::from(caps.person));
    let weapons = if rng.bernoulli(prevalence.p_weapon) {
        rng.uniform_int(1, 3)
    } else {
        0
    };
    let fire = if rng.bernoulli(prevalence.p_fire) {
        rng.uniform_int(1, 2)
    } else {
        0
    };
    let emotions = rng.binomial(persons, prevalence.em_rate);
    let body = rng.binomial(persons, prevalence.bl_rate);
    let counts = [persons, emotions, weapons, fire, body].map(|c| c as u32);
    let mut confidences = [0.0; NUM_CUES];
    for (conf, &count) in confidences.iter_mut().zip(&counts) {
        if count > 0 {
            *conf = round6(rng.uniform_range(0.6, 1.0));
        }
    }
    RawSceneObservation {
        scene_id: String::new(),
        counts,
        confidences,
        label: None,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DatasetSummary {
    pub n: usize,
    pub label_mean: f64,
    pub label_std: f64,
    /// Fraction of labels per band, Low/Medium/High.
    pub band_frequencies: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub records: Vec<SceneRecord>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn tokens(&self, caps: &CueCaps) -> Result<Vec<CueTokenSet>> {
        self.records.iter().map(|r| r.tokens(caps)).collect()
    }

    pub fn labels(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.risk).collect()
    }

    pub fn summary(&self) -> DatasetSummary {
        let n = self.records.len();
        let labels = self.labels();
        let mean = labels.iter().sum::<f64>() / n as f64;
        let var = labels.iter().map(|y| (y - mean).powi(2)).sum::<f64>() / n as f64;
        let mut bands = [0usize; 3];
        for &y in &labels {
            bands[quantize(y).unwrap_or(RiskBand::Low).index()] += 1;
        }
        DatasetSummary {
            n,
            label_mean: mean,
            label_std: var.sqrt(),
            band_frequencies: bands.map(|c| c as f64 / n as f64),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(CSV_HEADER);
        out.push('\n');
        for r in &self.records {
            out.push_str(&r.scene_id);
            for c in r.counts {
                write!(out, ",{c}").unwrap();
            }
            for c in r.confidences {
                write!(out, ",{c:.6}").unwrap();
            }
            writeln!(out, ",{:.6}", r.risk).unwrap();
        }
        out
    }

    pub fn from_csv(reader: impl Read) -> Result<Dataset> {
        let mut lines = BufReader::new(reader).lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Validation("empty scenes file".into()))?
            .map_err(|e| Error::Validation(e.to_string()))?;
        if header.trim_end() != CSV_HEADER {
            return Err(Error::Validation(format!("unexpected header {header:?}")));
        }
        let mut records = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::Validation(e.to_string()))?;
            if line.is_empty() {
                continue;
            }
            let row = i + 2;
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 12 {
                return Err(Error::Validation(format!(
                    "line {row}: expected 12 fields, found {}",
                    fields.len()
                )));
            }
            let bad = |what: &str| Error::Validation(format!("line {row}: bad {what}"));
            let mut counts = [0u32; NUM_CUES];
            for (k, c) in counts.iter_mut().enumerate() {
                *c = fields[1 + k].parse().map_err(|_| bad("count"))?;
            }
            let mut confidences = [0.0; NUM_CUES];
            for (k, c) in confidences.iter_mut().enumerate() {
                *c = fields[6 + k].parse().map_err(|_| bad("confidence"))?;
            }
            let risk: f64 = fields[11].parse().map_err(|_| bad("risk"))?;
            let record = SceneRecord {
                scene_id: fields[0].to_string(),
                counts,
                confidences,
                risk,
            };
            let violations = crate::cue::validate(&record.observation());
            if let Some(v) = violations.first() {
                return Err(Error::Validation(format!("line {row}: {v}")));
            }
            records.push(record);
        }
        Ok(Dataset { records })
    }
}

pub const CSV_HEADER: &str =
    "scene_id,nm_p,nm_em,nm_wp,nm_f,nm_bl,conf_p,conf_em,conf_wp,conf_f,conf_bl,risk";

/// Generates `n_scenes` labeled records. Confidences and labels are rounded
/// to six decimals, the precision of the CSV format, so the in-memory set
/// and its CSV image hold the same values.
pub fn generate(config: &GeneratorConfig) -> Result<Dataset> {
    config.validate()?;
    let mut rng = SeededRng::new(config.seed);
    let mut records = Vec::with_capacity(config.n_scenes);
    for i in 0..config.n_scenes {
        let raw = sample_scene(&mut rng, &config.prevalence, &config.caps);
        let eps = rng.normal(0.0, config.label_noise_sigma);
        let tokens = tokenize(&raw, &config.caps)?;
        records.push(SceneRecord {
            scene_id: format!("scene_{i:06}"),
            counts: raw.counts,
            confidences: raw.confidences,
            risk: round6(oracle_risk(&tokens, eps)),
        });
    }
    Ok(Dataset { records })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

/// Seeded shuffle followed by contiguous slicing.
pub fn split(dataset: &Dataset, fractions: [f64; 3], seed: u64) -> Result<Splits> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::Config(format!("split fractions {fractions:?} must sum to 1")));
    }
    let n = dataset.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::Validation(format!(
            "{n} records cannot fill three non-empty partitions with fractions {fractions:?}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed).shuffle(&mut order);
    let take = |idx: &[usize]| Dataset {
        records: idx.iter().map(|&i| dataset.records[i].clone()).collect(),
    };
    Ok(Splits {
        train: take(&order[..n_train]),
        val: take(&order[n_train..n_train + n_val]),
        test: take(&order[n_train + n_val..]),
    })
}
