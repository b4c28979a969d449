use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{at_path, Result};

/// SHA-256 of a file's bytes, hex encoded.
pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = at_path(path, std::fs::read(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Record of one command: config, seed and content hashes of every input
/// and output file, keyed by file name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub command: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn hash_all(files: &[&Path]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|p| {
            let key = p
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| p.display().to_string());
            Ok((key, file_sha256(p)?))
        })
        .collect()
}

impl Manifest {
    pub fn new(command: &str, config_hash: String, seed: u64, inputs: &[&Path], outputs: &[&Path]) -> Result<Self> {
        Ok(Self {
            command: command.to_string(),
            config_hash,
            seed,
            inputs: hash_all(inputs)?,
            outputs: hash_all(outputs)?,
        })
    }

    /// Writes `manifest_{command}.json` into `dir` and returns its path.
    pub fn write(&self, dir: &Path) -> Result<std::path::PathBuf> {
        let path = dir.join(format!("manifest_{}.json", self.command));
        let text = serde_json::to_string_pretty(self)?;
        at_path(&path, std::fs::write(&path, text))?;
        Ok(path)
    }
}
