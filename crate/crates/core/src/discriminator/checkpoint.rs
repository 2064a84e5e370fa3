//! JSON checkpoint format.
//!
//! ```json
//! {"version": "dusev-ckpt-1",
//!  "config": {...},
//!  "tensors": {"embed.w": {"shape": [64, 2], "data": [...]}, ...},
//!  "bn_stats": {"head.bn1": {"mean": [...], "var": [...]}, ...}}
//! ```
//!
//! Tensor data is row-major. Floats are written in shortest round-trip form,
//! so save -> load -> save is byte-identical.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::{ModelConfig, ModelParams};
use super::Discriminator;
use crate::error::{CheckpointError, Error, Result};
use crate::numerics::{BatchNormStats, Matrix, ParamSet};

pub const CHECKPOINT_VERSION: &str = "dusev-ckpt-1";

const BN_NAMES: [&str; 2] = ["head.bn1", "head.bn2"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorRecord {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointFile {
    pub version: String,
    pub config: ModelConfig,
    pub tensors: BTreeMap<String, TensorRecord>,
    pub bn_stats: BTreeMap<String, BatchNormStats>,
}

impl CheckpointFile {
    pub fn from_model(model: &Discriminator) -> Self {
        let tensors = model
            .params
            .params()
            .into_iter()
            .map(|p| {
                let (r, c) = p.shape();
                (
                    p.name.clone(),
                    TensorRecord {
                        shape: [r, c],
                        data: p.value.as_slice().to_vec(),
                    },
                )
            })
            .collect();
        let bn_stats = BN_NAMES
            .iter()
            .zip(&model.params.bn_stats)
            .map(|(n, s)| (n.to_string(), s.clone()))
            .collect();
        CheckpointFile {
            version: CHECKPOINT_VERSION.to_string(),
            config: model.config.clone(),
            tensors,
            bn_stats,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut bytes = serde_json::to_vec(self).expect("checkpoint serializes");
        bytes.push(b'\n');
        bytes
    }

    pub fn parse(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let value: serde_json::Value =
            serde_json::from_slice(bytes).map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        match value.get("version").and_then(|v| v.as_str()) {
            Some(CHECKPOINT_VERSION) => {}
            Some(other) => {
                return Err(CheckpointError::Version {
                    found: other.to_string(),
                    expected: CHECKPOINT_VERSION.to_string(),
                })
            }
            None => return Err(CheckpointError::Malformed("missing version tag".into())),
        }
        serde_json::from_value(value).map_err(|e| CheckpointError::Malformed(e.to_string()))
    }

    /// Rebuilds the model, checking every tensor against the stored config.
    pub fn into_model(self) -> Result<Discriminator> {
        self.config.validate()?;
        let mut params = ModelParams::init(&self.config)?;
        let mut tensors = self.tensors;
        for p in params.params_mut() {
            let rec = tensors
                .remove(&p.name)
                .ok_or_else(|| CheckpointError::MissingTensor(p.name.clone()))?;
            let found = (rec.shape[0], rec.shape[1]);
            if found != p.shape() {
                return Err(CheckpointError::Shape {
                    name: p.name.clone(),
                    expected: p.shape(),
                    found,
                }
                .into());
            }
            p.value = Matrix::from_vec(found.0, found.1, rec.data).map_err(|_| {
                CheckpointError::Malformed(format!("tensor {} data length disagrees with shape", p.name))
            })?;
        }
        if let Some(extra) = tensors.keys().next() {
            return Err(CheckpointError::Malformed(format!("unexpected tensor {extra}")).into());
        }
        for (name, slot) in BN_NAMES.iter().zip(params.bn_stats.iter_mut()) {
            let stats = self
                .bn_stats
                .get(*name)
                .ok_or_else(|| CheckpointError::MissingTensor(name.to_string()))?;
            let n = slot.mean.len();
            if stats.mean.len() != n || stats.var.len() != n {
                return Err(CheckpointError::Shape {
                    name: name.to_string(),
                    expected: (1, n),
                    found: (1, stats.mean.len()),
                }
                .into());
            }
            *slot = stats.clone();
        }
        let model = Discriminator {
            config: self.config,
            params,
        };
        if !model.params.is_finite() {
            return Err(Error::NonFinite("checkpoint parameters".into()));
        }
        Ok(model)
    }
}

impl Discriminator {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, CheckpointFile::from_model(self).to_bytes()).map_err(|source| {
            CheckpointError::Io {
                path: path.to_path_buf(),
                source,
            }
            .into()
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        CheckpointFile::parse(&bytes)?.into_model()
    }

    /// Loads a checkpoint and rejects it unless its tensors have the shapes
    /// `expected` would produce.
    pub fn load_expecting(path: impl AsRef<Path>, expected: &ModelConfig) -> Result<Self> {
        let model = Self::load(path)?;
        let want = ModelParams::expected_shapes(expected);
        let have = ModelParams::expected_shapes(&model.config);
        for (w, h) in want.iter().zip(&have) {
            if w != h {
                return Err(CheckpointError::Shape {
                    name: w.0.clone(),
                    expected: w.1,
                    found: h.1,
                }
                .into());
            }
        }
        if want.len() != have.len() {
            let name = want
                .get(have.len())
                .or_else(|| have.get(want.len()))
                .map(|t| t.0.clone())
                .unwrap_or_default();
            return Err(CheckpointError::MissingTensor(name).into());
        }
        Ok(model)
    }
}
