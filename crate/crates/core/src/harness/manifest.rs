use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ExperimentConfig, HarnessError, Result};

/// SHA-256 over `blob <len>\0` followed by the content, as git hashes blobs
/// (with SHA-256 in place of SHA-1).
pub fn blob_hash(content: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    format!("{:x}", h.finalize())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: PathBuf,
    pub bytes: u64,
    pub hash: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self> {
        let data = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(FileHash { path: path.to_path_buf(), bytes: data.len() as u64, hash: blob_hash(&data) })
    }
}

/// Everything needed to repeat a command: its arguments, the resolved
/// configuration, and content hashes of what it read and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub argv: Vec<String>,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub inputs: Vec<FileHash>,
    pub outputs: Vec<FileHash>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        let path = dir.join("manifest.json");
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        std::fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        Ok(path)
    }
}
