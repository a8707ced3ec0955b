//! Content hashes, run manifests and delimited report tables.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const RUN_FORMAT: &str = "humancal-run";
pub const RUN_VERSION: u32 = 1;

pub fn sha256_bytes(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

pub fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// A file consumed or produced by a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Artifact {
    pub role: String,
    /// Relative to the output directory when inside it.
    pub path: String,
    pub sha256: String,
}

impl Artifact {
    pub fn of(role: &str, path: &Path, out_dir: &Path) -> Result<Self> {
        let shown = path.strip_prefix(out_dir).unwrap_or(path);
        Ok(Self { role: role.into(), path: shown.display().to_string(), sha256: sha256_file(path)? })
    }
}

/// Self-contained record of one subcommand invocation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub format: String,
    pub version: u32,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub results: serde_json::Value,
}

impl RunManifest {
    pub fn input(&self, role: &str) -> Option<&Artifact> {
        self.inputs.iter().find(|a| a.role == role)
    }

    pub fn output(&self, role: &str) -> Option<&Artifact> {
        self.outputs.iter().find(|a| a.role == role)
    }
}

/// A header plus rows of already formatted cells.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(columns: impl IntoIterator<Item = S>) -> Self {
        Self { columns: columns.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push<S: ToString>(&mut self, row: impl IntoIterator<Item = S>) {
        let row: Vec<String> = row.into_iter().map(|c| c.to_string()).collect();
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.columns)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, self.to_csv()?).with_context(|| format!("writing {}", path.display()))
    }
}

/// Collects the outputs of a stage as they are written.
#[derive(Debug)]
pub struct Outputs {
    pub out_dir: PathBuf,
    pub artifacts: Vec<Artifact>,
}

impl Outputs {
    pub fn new(out_dir: &Path) -> Self {
        Self { out_dir: out_dir.to_path_buf(), artifacts: Vec::new() }
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.out_dir.join(rel)
    }

    pub fn table(&mut self, role: &str, rel: &str, table: &Table) -> Result<PathBuf> {
        let p = self.path(rel);
        table.write(&p)?;
        self.record(role, &p)?;
        Ok(p)
    }

    pub fn json<T: Serialize + ?Sized>(&mut self, role: &str, rel: &str, value: &T) -> Result<PathBuf> {
        let p = self.path(rel);
        write_json(&p, value)?;
        self.record(role, &p)?;
        Ok(p)
    }

    pub fn record(&mut self, role: &str, path: &Path) -> Result<()> {
        self.artifacts.push(Artifact::of(role, path, &self.out_dir)?);
        Ok(())
    }
}
