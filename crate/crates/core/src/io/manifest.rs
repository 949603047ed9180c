//! Run manifest: configuration snapshot, timing and output digests.

use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::config::RunConfig;
use crate::io::table::sha256_hex;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutputDigest {
    pub file: String,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub workers: usize,
    pub started: String,
    pub finished: String,
    /// Resolved configuration, identical to the contents of `config.toml`.
    pub config: String,
    pub outputs: Vec<OutputDigest>,
}

fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

/// Collects outputs of one command and writes them alongside the manifest.
pub struct ManifestWriter {
    dir: PathBuf,
    command: String,
    workers: usize,
    started: String,
    config: String,
    outputs: Vec<OutputDigest>,
}

impl ManifestWriter {
    /// Creates `dir` if needed and writes the configuration snapshot.
    pub fn start(dir: &Path, command: &str, config: &RunConfig, workers: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let text = config.to_toml()?;
        let mut w = Self {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            workers,
            started: now(),
            config: text.clone(),
            outputs: Vec::new(),
        };
        w.write_file(CONFIG_FILE, text.as_bytes())?;
        Ok(w)
    }

    pub fn path(&self, file: &str) -> PathBuf {
        self.dir.join(file)
    }

    /// Records a file already written into the output directory.
    pub fn record(&mut self, file: &str, sha256: String) {
        self.outputs.push(OutputDigest {
            file: file.to_string(),
            sha256,
        });
    }

    pub fn write_file(&mut self, file: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(file);
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.record(file, sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(self) -> Result<RunManifest> {
        let manifest = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            workers: self.workers,
            started: self.started,
            finished: now(),
            config: self.config,
            outputs: self.outputs,
        };
        let text = toml::to_string(&manifest)
            .map_err(|e| Error::Config(format!("cannot serialize manifest: {e}")))?;
        let path = self.dir.join(MANIFEST_FILE);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(manifest)
    }
}

pub fn read_manifest(path: &Path) -> Result<RunManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    toml::from_str(&text).map_err(|e| Error::Parse {
        source_name: path.display().to_string(),
        line: None,
        message: e.message().to_string(),
    })
}

/// Files whose current digest differs from the manifest.
pub fn verify_outputs(dir: &Path, manifest: &RunManifest) -> Result<Vec<String>> {
    let mut changed = Vec::new();
    for out in &manifest.outputs {
        let path = dir.join(&out.file);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if sha256_hex(&bytes) != out.sha256 {
            changed.push(out.file.clone());
        }
    }
    Ok(changed)
}
