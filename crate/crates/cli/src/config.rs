//! Run configuration: one JSON document covering every stage. Missing keys
//! take their defaults; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use dusev_core::discriminator::ModelConfig;
use dusev_core::explain::SurrogateConfig;
use dusev_core::robustness::{DEFAULT_JITTER, DEFAULT_SIGMAS};
use dusev_core::synthetic::GeneratorConfig;
use dusev_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitConfig {
    pub fractions: [f64; 3],
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            fractions: [0.70, 0.15, 0.15],
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplainConfig {
    /// Training scenes used as the Shapley and surface background.
    pub background_size: usize,
    /// Test scenes explained for the global reports.
    pub explain_size: usize,
    pub seed: u64,
    pub surrogate: SurrogateConfig,
    /// Correlate cue values with `"predictions"` or `"labels"`.
    pub correlate: CorrelationTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum CorrelationTarget {
    Predictions,
    Labels,
}

impl Default for ExplainConfig {
    fn default() -> Self {
        ExplainConfig {
            background_size: 256,
            explain_size: 512,
            seed: 42,
            surrogate: SurrogateConfig::default(),
            correlate: CorrelationTarget::Predictions,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RobustnessConfig {
    pub sigmas: Vec<f64>,
    pub jitter: f64,
    pub seed: u64,
    /// Training scenes whose mean token replaces an ablated cue.
    pub background_size: usize,
}

impl Default for RobustnessConfig {
    fn default() -> Self {
        RobustnessConfig {
            sigmas: DEFAULT_SIGMAS.to_vec(),
            jitter: DEFAULT_JITTER,
            seed: 42,
            background_size: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub warmup: usize,
    pub runs: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            warmup: 100,
            runs: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsConfig {
    pub scenes: PathBuf,
    pub model: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        PathsConfig {
            scenes: "scenes.csv".into(),
            model: "model.json".into(),
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub generator: GeneratorConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub explain: ExplainConfig,
    pub robustness: RobustnessConfig,
    pub bench: BenchConfig,
    pub paths: PathsConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generator.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        if self.explain.background_size == 0 || self.explain.explain_size == 0 {
            return Err(CliError::Validation("explain set sizes must be positive".into()));
        }
        if self.robustness.background_size == 0 {
            return Err(CliError::Validation("robustness background_size must be positive".into()));
        }
        if self.bench.runs == 0 {
            return Err(CliError::Validation("bench runs must be positive".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the compact JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&bytes)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}
