//! Run manifests: enough to rerun an experiment and check that it
//! reproduced every artifact byte for byte.

use crate::config::ExperimentConfig;
use crate::error::CliError;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Subcommand words, e.g. `["verify", "fclt"]`.
    pub command: Vec<String>,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_sha256: String,
    /// The configuration after command-line overrides.
    pub config: serde_json::Value,
    pub seeds: Vec<u64>,
    pub wall_time_secs: f64,
    /// Artifact file name (relative to the manifest) to SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn config_hash(cfg: &ExperimentConfig) -> (serde_json::Value, String) {
    let value = serde_json::to_value(cfg).expect("configs always serialize");
    let hash = sha256_hex(value.to_string().as_bytes());
    (value, hash)
}

/// Where the manifest for an output location lives: inside a directory,
/// or beside a single file as `<file>.manifest.json`.
pub fn manifest_path(out: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        out.join(MANIFEST_NAME)
    } else {
        let mut name = out.file_name().map(|s| s.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        out.with_file_name(name)
    }
}

pub fn hash_outputs(base: &Path, files: &[PathBuf]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for f in files {
        let bytes = std::fs::read(f).map_err(|e| CliError::Io(format!("{}: {e}", f.display())))?;
        let rel = f.strip_prefix(base).unwrap_or(f);
        out.insert(rel.to_string_lossy().into_owned(), sha256_hex(&bytes));
    }
    Ok(out)
}

impl Manifest {
    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifests always serialize");
        std::fs::write(path, text + "\n").map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Schema(format!("cannot read manifest {}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Schema(format!("{}: at `{}`: {}", path.display(), e.path(), e.inner())))
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, CliError> {
        let cfg = ExperimentConfig::from_json(&self.config.to_string(), "manifest config")?;
        let (_, hash) = config_hash(&cfg);
        if hash != self.config_sha256 {
            return Err(CliError::Schema(format!(
                "manifest config hash {} does not match its config ({hash})",
                self.config_sha256
            )));
        }
        Ok(cfg)
    }
}
