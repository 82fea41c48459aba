use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub run_id: String,
    pub subcommand: String,
    pub version: String,
    pub master_seed: u64,
    /// SHA-256 of the canonical JSON of `config`.
    pub config_sha256: String,
    /// Resolved config, numerical defaults included, with the effective seed.
    pub config: ExperimentConfig,
    pub tables: Vec<String>,
}

pub fn canonical_json(config: &ExperimentConfig) -> String {
    serde_json::to_string(config).expect("config serializes")
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let digest = Sha256::digest(canonical_json(config).as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn read(path: &Path) -> Result<Manifest, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let m: Manifest = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("manifest: {e}")))?;
    if config_hash(&m.config) != m.config_sha256 {
        return Err(CliError::Config("manifest config does not match its recorded hash".into()));
    }
    Ok(m)
}
