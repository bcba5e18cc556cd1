use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{io_context, CliResult};

pub const VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "+g", env!("PROTEMBED_GIT_REV"));

/// Provenance record written next to every run's outputs.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub version: &'static str,
    pub seed: u64,
    pub workers: usize,
    /// Fully resolved configuration, defaults included.
    pub config: Value,
    /// SHA-256 of each input file, keyed by path as given.
    pub inputs: BTreeMap<String, String>,
    pub outputs: Vec<String>,
    pub started: String,
    pub finished: String,
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = io_context(std::fs::read(path), path)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn digests(paths: &[PathBuf]) -> CliResult<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}
