use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, Seeds};
use crate::Failure;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHash {
    pub path: String,
    pub sha256: String,
}

impl FileHash {
    pub fn of(path: &Path) -> Result<Self, Failure> {
        Ok(Self { path: path.display().to_string(), sha256: sha256_file(path)? })
    }
}

/// Written next to every command's outputs. Passing it back through
/// `--config` repeats the run with the same effective configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub command: String,
    pub config: Config,
    pub seeds: Seeds,
    pub inputs: Vec<FileHash>,
    /// Paths relative to the output directory.
    pub artifacts: Vec<FileHash>,
    pub summary: serde_json::Value,
}

pub fn sha256_file(path: &Path) -> Result<String, Failure> {
    let bytes = fs::read(path).map_err(|e| Failure::Run(format!("cannot hash {}: {e}", path.display())))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

pub struct ManifestWriter {
    out: PathBuf,
    manifest: RunManifest,
}

impl ManifestWriter {
    pub fn new(command: &str, config: &Config, out: &Path) -> Self {
        Self {
            out: out.to_path_buf(),
            manifest: RunManifest {
                tool: format!("dkdfmh {}", env!("CARGO_PKG_VERSION")),
                command: command.into(),
                config: config.clone(),
                seeds: config.seeds(),
                inputs: Vec::new(),
                artifacts: Vec::new(),
                summary: serde_json::Value::Null,
            },
        }
    }

    pub fn input(&mut self, path: &Path) -> Result<(), Failure> {
        self.manifest.inputs.push(FileHash::of(path)?);
        Ok(())
    }

    /// Writes `bytes` to `out/name` and records its hash.
    pub fn artifact(&mut self, name: &str, bytes: &[u8]) -> Result<PathBuf, Failure> {
        let path = self.out.join(name);
        fs::write(&path, bytes).map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))?;
        self.record(name)?;
        Ok(path)
    }

    /// Records a file some other code already wrote to `out/name`.
    pub fn record(&mut self, name: &str) -> Result<(), Failure> {
        let sha256 = sha256_file(&self.out.join(name))?;
        self.manifest.artifacts.push(FileHash { path: name.into(), sha256 });
        Ok(())
    }

    pub fn finish(mut self, summary: serde_json::Value) -> Result<RunManifest, Failure> {
        self.manifest.summary = summary;
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = self.out.join("manifest.json");
        fs::write(&path, text + "\n").map_err(|e| Failure::Run(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}
