//! Output directory handling: atomic writes, checksums and the run manifest.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ExperimentConfig;
use crate::error::{HarnessError, Result};

pub const MANIFEST: &str = "manifest.json";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Writes through a sibling temporary file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub model: String,
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment: String,
    pub config: ExperimentConfig,
    pub code_version: String,
    pub started_unix: u64,
    pub wall_clock_secs: f64,
    pub checkpoints: Vec<CheckpointRef>,
    /// File name to SHA-256 of its bytes.
    pub outputs: BTreeMap<String, String>,
}

/// The files of one run. Creating it removes a previous manifest, so an
/// interrupted run never looks complete.
pub struct Artifacts {
    dir: PathBuf,
    started: Instant,
    started_unix: u64,
    outputs: BTreeMap<String, String>,
    checkpoints: Vec<CheckpointRef>,
}

impl Artifacts {
    pub fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        let manifest = dir.join(MANIFEST);
        if manifest.exists() {
            std::fs::remove_file(manifest)?;
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            started: Instant::now(),
            started_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
            outputs: BTreeMap::new(),
            checkpoints: Vec::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Renders into a buffer with `render`, then writes it.
    pub fn write_with(
        &mut self,
        name: &str,
        render: impl FnOnce(&mut Vec<u8>) -> Result<()>,
    ) -> Result<()> {
        let mut buf = Vec::new();
        render(&mut buf)?;
        self.write(name, &buf)
    }

    /// Writes a CSV from a header and rows.
    pub fn csv(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
        self.write_with(name, |buf| {
            let mut w = csv::Writer::from_writer(buf);
            w.write_record(header)?;
            for r in rows {
                w.write_record(r)?;
            }
            w.flush()?;
            Ok(())
        })
    }

    pub fn record_checkpoint(&mut self, model: &str, path: &Path) -> Result<()> {
        if self.checkpoints.iter().any(|c| c.model == model) {
            return Ok(());
        }
        let bytes = std::fs::read(path)?;
        self.checkpoints.push(CheckpointRef {
            model: model.into(),
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
        });
        Ok(())
    }

    pub fn outputs(&self) -> &BTreeMap<String, String> {
        &self.outputs
    }

    /// Writes the manifest last.
    pub fn finish(self, experiment: &str, config: &ExperimentConfig) -> Result<RunManifest> {
        let manifest = RunManifest {
            experiment: experiment.into(),
            config: config.clone(),
            code_version: env!("CARGO_PKG_VERSION").into(),
            started_unix: self.started_unix,
            wall_clock_secs: self.started.elapsed().as_secs_f64(),
            checkpoints: self.checkpoints,
            outputs: self.outputs,
        };
        write_atomic(
            &self.dir.join(MANIFEST),
            &serde_json::to_vec_pretty(&manifest)?,
        )?;
        Ok(manifest)
    }
}

/// Reads a manifest and checks every recorded output against its checksum.
pub fn verify_run(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST);
    if !path.exists() {
        return Err(HarnessError::Config(format!(
            "{} has no manifest; the run failed",
            dir.display()
        )));
    }
    let manifest: RunManifest = serde_json::from_slice(&std::fs::read(&path)?)?;
    for (name, sum) in &manifest.outputs {
        let bytes = std::fs::read(dir.join(name))?;
        if &sha256_hex(&bytes) != sum {
            return Err(HarnessError::Config(format!(
                "{name} does not match its manifest checksum"
            )));
        }
    }
    Ok(manifest)
}

/// Fixed-format float for CSV cells.
pub fn fmt(x: f64) -> String {
    format!("{x:e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_records_and_verifies_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = Artifacts::create(dir.path()).unwrap();
        a.csv("t.csv", &["a", "b"], &[vec!["1".into(), fmt(0.5)]])
            .unwrap();
        a.write("p.svg", b"<svg/>").unwrap();
        let m = a.finish("exp_x", &ExperimentConfig::default()).unwrap();
        assert_eq!(
            std::fs::read_to_string(dir.path().join("t.csv")).unwrap(),
            "a,b\n1,5e-1\n"
        );
        assert_eq!(m.outputs.len(), 2);
        assert_eq!(verify_run(dir.path()).unwrap(), m);
        std::fs::write(dir.path().join("t.csv"), "tampered").unwrap();
        assert!(verify_run(dir.path()).is_err());
    }

    #[test]
    fn a_new_run_removes_the_old_manifest() {
        let dir = tempfile::tempdir().unwrap();
        Artifacts::create(dir.path())
            .unwrap()
            .finish("exp_x", &ExperimentConfig::default())
            .unwrap();
        assert!(dir.path().join(MANIFEST).exists());
        let _pending = Artifacts::create(dir.path()).unwrap();
        assert!(verify_run(dir.path()).is_err());
    }
}
