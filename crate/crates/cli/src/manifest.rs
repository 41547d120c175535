use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutputFile {
    /// Relative to the output directory.
    pub path: String,
    pub sha256: String,
}

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub toolkit_version: String,
    pub config_hash: String,
    pub config: Value,
    pub outputs: Vec<OutputFile>,
    pub extra: Value,
}

/// Collects the files a command writes into one output directory.
pub struct Outputs {
    dir: PathBuf,
    files: Vec<OutputFile>,
}

impl Outputs {
    pub fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)?;
        Ok(Outputs { dir, files: Vec::new() })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, CliError> {
        let path = self.dir.join(name);
        std::fs::write(&path, bytes)?;
        self.files.push(OutputFile {
            path: name.to_string(),
            sha256: hex::encode(Sha256::digest(bytes)),
        });
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, name: &str, v: &T) -> Result<PathBuf, CliError> {
        let mut s = serde_json::to_string_pretty(v).map_err(reachsafe_core::Error::from)?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    /// Writes `manifest_<command>.json` and returns its path.
    pub fn finish(mut self, command: &str, cfg: &RunConfig, extra: Value) -> Result<PathBuf, CliError> {
        let m = Manifest {
            command: command.to_string(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            config: cfg.value.clone(),
            outputs: std::mem::take(&mut self.files),
            extra,
        };
        let name = format!("manifest_{command}.json");
        let mut s = serde_json::to_string_pretty(&m).map_err(reachsafe_core::Error::from)?;
        s.push('\n');
        let path = self.dir.join(name);
        std::fs::write(&path, s)?;
        Ok(path)
    }
}
