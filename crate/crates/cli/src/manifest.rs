use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

/// What a run was given: the fully resolved flags, the seed, digests of
/// every input file and the build that ran it. Written before any work
/// starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub inputs: Vec<InputDigest>,
    pub code_version: String,
    pub rng: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: PathBuf,
    pub bytes: u64,
    pub sha256: String,
}

pub fn digest_file(path: &Path) -> Result<InputDigest, CliError> {
    let data = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(InputDigest {
        path: path.to_path_buf(),
        bytes: data.len() as u64,
        sha256: hex::encode(Sha256::digest(&data)),
    })
}

impl RunManifest {
    pub fn new(
        command: &str,
        config: &impl Serialize,
        seed: Option<u64>,
        inputs: &[&Path],
    ) -> Result<Self, CliError> {
        Ok(Self {
            command: command.to_string(),
            config: serde_json::to_value(config).expect("arguments serialize"),
            seed,
            inputs: inputs
                .iter()
                .map(|p| digest_file(p))
                .collect::<Result<_, _>>()?,
            code_version: format!("propall {}", env!("CARGO_PKG_VERSION")),
            rng: propall_core::gumbel::RNG_ALGORITHM.to_string(),
        })
    }

    /// Inputs whose current contents no longer match the recorded digest.
    pub fn changed_inputs(&self) -> Vec<PathBuf> {
        self.inputs
            .iter()
            .filter(|d| digest_file(&d.path).map_or(true, |now| now.sha256 != d.sha256))
            .map(|d| d.path.clone())
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(self).expect("manifest serializes");
        text.push('\n');
        std::fs::write(path, text).map_err(|e| CliError::io(path, e))
    }
}
