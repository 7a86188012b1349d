use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub bytes: u64,
    pub sha256: String,
}

/// Record of one command run and every file it wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config_path: Option<PathBuf>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    pub failed_replications: usize,
    pub artifacts: Vec<Artifact>,
}

impl RunManifest {
    pub fn new(
        command: &str,
        config_path: Option<&Path>,
        config: serde_json::Value,
        out: &Path,
    ) -> Self {
        Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_path: config_path.map(Path::to_path_buf),
            config,
            seed: None,
            output_dir: out.to_path_buf(),
            failed_replications: 0,
            artifacts: Vec::new(),
        }
    }

    /// Write `contents` to `out/name` and record its checksum.
    pub fn emit(&mut self, name: &str, contents: &[u8]) -> Result<()> {
        std::fs::write(self.output_dir.join(name), contents)?;
        self.artifacts.push(Artifact {
            file: name.to_string(),
            bytes: contents.len() as u64,
            sha256: format!("{:x}", Sha256::digest(contents)),
        });
        Ok(())
    }

    pub fn finish(self) -> Result<()> {
        let text = serde_json::to_string_pretty(&self)?;
        std::fs::write(self.output_dir.join("manifest.json"), text + "\n")?;
        Ok(())
    }
}
