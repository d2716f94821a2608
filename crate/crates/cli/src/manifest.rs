//! `manifest.toml`: everything needed to re-run a command bit-exactly.

use std::fs;
use std::path::{Path, PathBuf};

use optswitch::models::ModelConfig;
use optswitch::{Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::args::Command;

pub const FILE: &str = "manifest.toml";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    /// Hex SHA-256 of `model`; empty for commands spanning several models.
    pub model_fingerprint: String,
    /// Model configuration as TOML.
    pub model: String,
    pub inputs: Vec<FileDigest>,
    pub outputs: Vec<FileDigest>,
    pub run: Command,
}

impl Manifest {
    pub fn new(run: &Command, model: Option<&ModelConfig>) -> Result<Self> {
        let (model_fingerprint, model) = match model {
            Some(m) => (m.fingerprint()?, m.to_toml()?),
            None => (String::new(), String::new()),
        };
        Ok(Self {
            tool: env!("CARGO_PKG_NAME").to_owned(),
            version: env!("CARGO_PKG_VERSION").to_owned(),
            model_fingerprint,
            model,
            inputs: Vec::new(),
            outputs: Vec::new(),
            run: run.clone(),
        })
    }

    pub fn model_config(&self) -> Result<Option<ModelConfig>> {
        if self.model.is_empty() {
            return Ok(None);
        }
        ModelConfig::from_toml(&self.model).map(Some)
    }

    pub fn add_input(&mut self, path: &Path) -> Result<()> {
        self.inputs.push(digest(path)?);
        Ok(())
    }

    /// Records every file of `dir` except the manifest, in sorted order.
    pub fn add_outputs(&mut self, dir: &Path) -> Result<()> {
        let mut files = Vec::new();
        collect(dir, &mut files)?;
        files.sort();
        for f in files {
            if f.file_name().is_some_and(|n| n == FILE) {
                continue;
            }
            let mut d = digest(&f)?;
            d.path = f.strip_prefix(dir).unwrap_or(&f).display().to_string();
            self.outputs.push(d);
        }
        Ok(())
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(FILE);
        let text = toml::to_string(self).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        fs::write(&path, text).map_err(|e| io(&path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| io(dir, e))? {
        let path = entry.map_err(|e| io(dir, e))?.path();
        if path.is_dir() {
            collect(&path, out)?;
        } else {
            out.push(path);
        }
    }
    Ok(())
}

pub fn digest(path: &Path) -> Result<FileDigest> {
    let bytes = fs::read(path).map_err(|e| io(path, e))?;
    Ok(FileDigest {
        path: path.display().to_string(),
        sha256: hex(&Sha256::digest(&bytes)),
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_owned(),
        source,
    }
}
