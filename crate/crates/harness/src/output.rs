//! Files written by the harness: atomic writes, CSV helpers and the run
//! manifest.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

/// Writes `bytes` to `path` through a temporary file in the same directory,
/// so readers never see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| HarnessError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| HarnessError::io(path, e))?;
    tmp.persist(path).map_err(|e| HarnessError::io(path, e.error))?;
    Ok(())
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Renders rows under a fixed header.
pub fn csv_bytes<R: AsRef<[String]>>(header: &[&str], rows: impl IntoIterator<Item = R>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.as_ref())?;
    }
    w.into_inner().map_err(|e| HarnessError::Run(format!("csv buffer: {e}")))
}

/// Shortest text that parses back to the same `f64`.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

/// Header row of a CSV file.
pub fn csv_header(path: &Path) -> Result<Vec<String>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.headers()?.iter().map(str::to_string).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one harness run, enough to reproduce every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub command: String,
    pub config_sha256: String,
    pub seeds: Vec<(String, u64)>,
    pub artifacts: Vec<Artifact>,
    pub wall_clock_seconds: f64,
}

/// Collects the files of one run and writes the manifest at the end.
#[derive(Debug)]
pub struct RunRecorder {
    root: PathBuf,
    artifacts: Vec<Artifact>,
}

impl RunRecorder {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
            artifacts: Vec::new(),
        }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Writes an artifact at `relative` under the run root.
    pub fn write(&mut self, relative: impl AsRef<Path>, bytes: &[u8]) -> Result<PathBuf> {
        let relative = relative.as_ref();
        let path = self.root.join(relative);
        write_atomic(&path, bytes)?;
        self.artifacts.retain(|a| a.path != relative);
        self.artifacts.push(Artifact {
            path: relative.to_path_buf(),
            sha256: sha256_hex(bytes),
        });
        Ok(path)
    }

    pub fn artifacts(&self) -> &[Artifact] {
        &self.artifacts
    }

    /// Writes `manifest-<command>.json` and returns its path.
    pub fn finish(
        self,
        command: &str,
        config_sha256: String,
        seeds: Vec<(String, u64)>,
        wall_clock_seconds: f64,
    ) -> Result<PathBuf> {
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_sha256,
            seeds,
            artifacts: self.artifacts,
            wall_clock_seconds,
        };
        let path = self.root.join(format!("manifest-{command}.json"));
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serialises");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}
