//! Stage manifests: every stage records the hashes of what it read and wrote, and
//! later stages verify artifacts against them before use.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parkcast_core::fingerprint::sha256_hex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::CliError;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stage: String,
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input name to sha256 of its bytes.
    pub inputs: BTreeMap<String, String>,
    /// Output file name (relative to the work directory) to sha256 of its bytes.
    pub outputs: BTreeMap<String, String>,
    pub details: Value,
}

/// Output directory of a pipeline run.
pub struct Workspace {
    pub dir: PathBuf,
}

impl Workspace {
    pub fn new(dir: PathBuf) -> Result<Self, CliError> {
        std::fs::create_dir_all(&dir)
            .map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", dir.display())))?;
        Ok(Self { dir })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn manifest_path(&self, stage: &str) -> PathBuf {
        self.path(&format!("{stage}.manifest.json"))
    }

    pub fn read_manifest(&self, stage: &str) -> Result<Manifest, CliError> {
        let path = self.manifest_path(stage);
        let text = std::fs::read_to_string(&path).map_err(|_| {
            CliError::Validation(format!(
                "{} not found; run `parkcast {stage}` with the same --out first",
                path.display()
            ))
        })?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }

    /// Reads an artifact written by `stage`, refusing it if its bytes changed since.
    pub fn read_verified(&self, stage: &str, name: &str) -> Result<(Vec<u8>, String), CliError> {
        let manifest = self.read_manifest(stage)?;
        let expected = manifest.outputs.get(name).ok_or_else(|| {
            CliError::Validation(format!(
                "the {stage} manifest lists no artifact named {name}"
            ))
        })?;
        let bytes = read_input(&self.path(name))?;
        let actual = sha256_hex(&bytes);
        if &actual != expected {
            return Err(CliError::Validation(format!(
                "fingerprint mismatch for {}: expected {expected} (recorded by {stage}), actual {actual}",
                self.path(name).display()
            )));
        }
        Ok((bytes, actual))
    }
}

/// Reads an input file; a missing or unreadable file is a validation failure.
pub fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    std::fs::read(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

/// Collects a stage's outputs and writes them together with the manifest.
pub struct StageWriter<'a> {
    ws: &'a Workspace,
    manifest: Manifest,
}

impl<'a> StageWriter<'a> {
    pub fn new(ws: &'a Workspace, stage: &str, config_hash: &str, seed: u64) -> Self {
        Self {
            ws,
            manifest: Manifest {
                stage: stage.to_string(),
                tool_version: TOOL_VERSION.to_string(),
                config_hash: config_hash.to_string(),
                seed,
                inputs: BTreeMap::new(),
                outputs: BTreeMap::new(),
                details: Value::Null,
            },
        }
    }

    pub fn input(&mut self, name: impl Into<String>, sha: impl Into<String>) -> &mut Self {
        self.manifest.inputs.insert(name.into(), sha.into());
        self
    }

    pub fn inputs(&self) -> &BTreeMap<String, String> {
        &self.manifest.inputs
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<(), CliError> {
        let path = self.ws.path(name);
        std::fs::write(&path, bytes)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        self.manifest
            .outputs
            .insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    pub fn finish(mut self, details: Value) -> Result<Manifest, CliError> {
        self.manifest.details = details;
        let text = pretty(&self.manifest)?;
        let path = self.ws.manifest_path(&self.manifest.stage);
        std::fs::write(&path, text)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        Ok(self.manifest)
    }
}

pub fn pretty<T: Serialize>(v: &T) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| CliError::Runtime(e.to_string()))?;
    s.push('\n');
    Ok(s)
}
