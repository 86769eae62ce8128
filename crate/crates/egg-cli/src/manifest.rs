//! Run manifests: the resolved config plus, per executed stage, the input
//! and output artifacts with their content hashes. The manifest is written
//! last and atomically, so a crash mid-stage never leaves a manifest that
//! claims outputs it does not have.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::ResolvedConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StageRecord {
    pub stage: String,
    pub seed: u64,
    pub started_at_unix: u64,
    pub finished_at_unix: u64,
    pub inputs: Vec<FileRecord>,
    pub outputs: Vec<FileRecord>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub tool_version: String,
    pub created_at_unix: u64,
    pub run_dir: String,
    pub config: ResolvedConfig,
    pub stages: Vec<StageRecord>,
}

pub fn unix_now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

pub fn sha256_file(path: impl AsRef<Path>) -> Result<String> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

pub fn file_record(path: impl AsRef<Path>) -> Result<FileRecord> {
    let path = path.as_ref();
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: sha256_file(path)?,
    })
}

impl RunManifest {
    pub fn new(config: ResolvedConfig, run_dir: impl AsRef<Path>) -> Self {
        Self {
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            created_at_unix: unix_now(),
            run_dir: run_dir.as_ref().display().to_string(),
            config,
            stages: Vec::new(),
        }
    }

    pub fn path_in(run_dir: impl AsRef<Path>) -> PathBuf {
        run_dir.as_ref().join(MANIFEST_FILE)
    }

    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = Self::path_in(run_dir);
        let raw = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))
    }

    /// Load the existing manifest or start one with `config`. A re-run with a
    /// different resolved config replaces the snapshot (stage records of
    /// stages not re-run are kept for provenance).
    pub fn load_or_new(config: &ResolvedConfig, run_dir: impl AsRef<Path>) -> Self {
        match Self::load(&run_dir) {
            Ok(mut manifest) => {
                manifest.config = config.clone();
                manifest
            }
            Err(_) => Self::new(config.clone(), run_dir),
        }
    }

    /// Replace or append a stage record.
    pub fn upsert_stage(&mut self, record: StageRecord) {
        match self.stages.iter_mut().find(|s| s.stage == record.stage) {
            Some(slot) => *slot = record,
            None => self.stages.push(record),
        }
    }

    pub fn stage(&self, name: &str) -> Option<&StageRecord> {
        self.stages.iter().find(|s| s.stage == name)
    }

    /// Atomic write: temp file in the run directory, then rename.
    pub fn write(&self, run_dir: impl AsRef<Path>) -> Result<()> {
        let final_path = Self::path_in(&run_dir);
        let tmp_path = run_dir.as_ref().join(".manifest.json.tmp");
        let json = serde_json::to_string_pretty(self)?;
        std::fs::write(&tmp_path, json).with_context(|| format!("writing {}", tmp_path.display()))?;
        std::fs::rename(&tmp_path, &final_path)
            .with_context(|| format!("renaming manifest into {}", final_path.display()))?;
        Ok(())
    }
}
