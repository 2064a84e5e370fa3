//! Output files and their `.meta.json` sidecars.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::CliError;

pub const META_FORMAT: &str = "dusev-meta-1";

/// Provenance written next to every output. Holds no timestamps, so reruns
/// reproduce it byte for byte.
#[derive(Debug, Clone, Serialize)]
pub struct Meta {
    pub format_version: &'static str,
    pub tool_version: &'static str,
    pub command: &'static str,
    pub seed: u64,
    pub config_hash: String,
    /// SHA-256 of each input file, by path as given.
    pub inputs: Vec<(String, String)>,
}

impl Meta {
    pub fn new(command: &'static str, seed: u64, config_hash: String) -> Self {
        Meta {
            format_version: META_FORMAT,
            tool_version: env!("CARGO_PKG_VERSION"),
            command,
            seed,
            config_hash,
            inputs: Vec::new(),
        }
    }

    pub fn with_input(mut self, path: &Path, bytes: &[u8]) -> Self {
        let digest: String = Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect();
        self.inputs.push((path.display().to_string(), digest));
        self
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn read(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => {
            fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
        }
        _ => Ok(()),
    }
}

/// Writes `bytes` to `path` and the sidecar next to it.
pub fn write(path: &Path, bytes: &[u8], meta: &Meta) -> Result<(), CliError> {
    ensure_parent(path)?;
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))?;
    let side = sidecar_path(path);
    let text = serde_json::to_string_pretty(meta).expect("meta serializes") + "\n";
    fs::write(&side, text).map_err(|e| CliError::io(&side, e))
}

pub fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(value).expect("output serializes");
    bytes.push(b'\n');
    bytes
}
