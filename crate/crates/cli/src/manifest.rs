//! `manifest.json` at the top of an experiment directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub run_id: String,
    /// Hash of the run's `config.cfg`.
    pub config_hash: String,
    pub seed: u64,
    /// Swept settings of this run (empty for a single `train`).
    pub params: BTreeMap<String, String>,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentManifest {
    pub schema_version: u32,
    pub experiment_id: String,
    /// Hash of the base settings the experiment was last launched with.
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub output_dir: String,
    pub toolkit_version: String,
    pub runs: Vec<RunEntry>,
}

impl ExperimentManifest {
    pub fn new(experiment_id: &str, config_hash: &str, output_dir: &Path) -> Self {
        Self {
            schema_version: MANIFEST_SCHEMA_VERSION,
            experiment_id: experiment_id.to_string(),
            config_hash: config_hash.to_string(),
            seeds: Vec::new(),
            output_dir: output_dir.display().to_string(),
            toolkit_version: cdb_core::TOOLKIT_VERSION.to_string(),
            runs: Vec::new(),
        }
    }

    pub fn load(dir: &Path) -> Result<Option<Self>> {
        let path = dir.join(MANIFEST_FILE);
        if !path.exists() {
            return Ok(None);
        }
        let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m = serde_json::from_str(&text)
            .map_err(|e| cdb_core::Error::Format(format!("{}: {e}", path.display())))?;
        Ok(Some(m))
    }

    /// Replaces the entry with the same run id, or appends.
    pub fn upsert(&mut self, entry: RunEntry) {
        match self.runs.iter_mut().find(|r| r.run_id == entry.run_id) {
            Some(r) => *r = entry,
            None => self.runs.push(entry),
        }
        self.seeds = self.runs.iter().map(|r| r.seed).collect();
        self.seeds.sort_unstable();
        self.seeds.dedup();
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(self).expect("manifest serialises");
        fs::write(&path, text + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn entry(id: &str, seed: u64) -> RunEntry {
        RunEntry {
            run_id: id.into(),
            config_hash: "h".into(),
            seed,
            params: BTreeMap::new(),
            status: RunStatus::Ok,
            error: None,
            warnings: vec![],
        }
    }

    #[test]
    fn upsert_and_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = ExperimentManifest::new("e", "abc", dir.path());
        m.upsert(entry("a", 3));
        m.upsert(entry("b", 1));
        m.upsert(RunEntry { status: RunStatus::Failed, error: Some("x".into()), ..entry("a", 3) });
        assert_eq!(m.runs.len(), 2);
        assert_eq!(m.seeds, vec![1, 3]);
        m.save(dir.path()).unwrap();
        assert_eq!(ExperimentManifest::load(dir.path()).unwrap(), Some(m));
        assert_eq!(ExperimentManifest::load(&dir.path().join("missing")).unwrap(), None);
    }
}
