//! Run manifests: every artifact written to disk is accompanied by a
//! `<out>.manifest.json` recording the configuration hash, seeding, tool
//! version, and wall time. Everything except `wall_time_ms` is reproducible.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::HarnessError;

#[derive(Debug, Serialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub seed: u64,
    pub runs: u64,
    pub mode: String,
    pub tool_version: String,
    pub wall_time_ms: u128,
    pub outputs: Vec<String>,
}

pub fn config_hash(config: &ExperimentConfig) -> String {
    let canonical = serde_json::to_vec(config).expect("config serializes");
    let mut hasher = Sha256::new();
    hasher.update(&canonical);
    hex::encode(hasher.finalize())
}

pub fn write_manifest(
    config: &ExperimentConfig,
    out: &Path,
    started: Instant,
) -> Result<PathBuf, HarnessError> {
    let manifest = Manifest {
        config_sha256: config_hash(config),
        seed: config.seed,
        runs: config.runs,
        mode: config.mode.kind_name().to_string(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        wall_time_ms: started.elapsed().as_millis(),
        outputs: vec![out.display().to_string()],
    };
    let mut path = out.as_os_str().to_owned();
    path.push(".manifest.json");
    let path = PathBuf::from(path);
    let text = serde_json::to_string_pretty(&manifest)
        .map_err(|e| HarnessError::Runtime(format!("manifest serialization: {e}")))?;
    std::fs::write(&path, text)
        .map_err(|e| HarnessError::Runtime(format!("writing {}: {e}", path.display())))?;
    Ok(path)
}
