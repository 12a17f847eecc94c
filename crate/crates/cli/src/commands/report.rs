use std::fs;
use std::path::Path;

use anyhow::Result;
use cdb_core::eval::{report_tables, RunSummary, Tables};
use cdb_core::trainer::checkpoint::CheckpointManifest;
use cdb_core::trainer::config::{config_hash, parse_kv_lines};
use cdb_core::Error;

use super::{to_json, write_file, EXPERIMENT_CFG, REPORT_DIR, RUNS_DIR};
use crate::manifest::{ExperimentManifest, RunStatus};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())).into())
}

fn stored_hash(path: &Path) -> Result<String> {
    Ok(config_hash(&parse_kv_lines(&read(path)?)?))
}

pub fn write_tables(dir: &Path, t: &Tables) -> Result<()> {
    write_file(&dir.join("runs.csv"), &t.runs_csv)?;
    write_file(&dir.join("summary.csv"), &t.summary_csv)?;
    if let Some(d) = &t.decoupled_csv {
        write_file(&dir.join("decoupled.csv"), d)?;
    }
    write_file(&dir.join("summary.json"), to_json(&t.summary_json))
}

/// `cdb report`: rebuilds the tables from every successful run in the
/// manifest, after checking that no stored config was edited since.
pub fn report(exp_dir: &Path) -> Result<Tables> {
    let manifest = ExperimentManifest::load(exp_dir)?
        .ok_or_else(|| Error::Format(format!("no manifest.json under {}", exp_dir.display())))?;
    let cfg = exp_dir.join(EXPERIMENT_CFG);
    if cfg.exists() && stored_hash(&cfg)? != manifest.config_hash {
        return Err(Error::Consistency(format!("{} does not match the manifest's config hash", cfg.display())).into());
    }
    let mut summaries = Vec::new();
    for entry in manifest.runs.iter().filter(|r| r.status == RunStatus::Ok) {
        let dir = exp_dir.join(RUNS_DIR).join(&entry.run_id);
        if stored_hash(&dir.join("config.cfg"))? != entry.config_hash {
            return Err(Error::Consistency(format!(
                "{}: config.cfg does not match the manifest's config hash",
                dir.display()
            ))
            .into());
        }
        let ckpt: CheckpointManifest = serde_json::from_str(&read(&dir.join("model.json"))?)
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join("model.json").display())))?;
        if ckpt.config_hash != entry.config_hash {
            return Err(Error::Consistency(format!("{}: checkpoint belongs to another config", dir.display())).into());
        }
        let summary: RunSummary = serde_json::from_str(&read(&dir.join("summary.json"))?)
            .map_err(|e| Error::Format(format!("{}: {e}", dir.join("summary.json").display())))?;
        summaries.push(summary);
    }
    let tables = report_tables(&summaries)?;
    write_tables(&exp_dir.join(REPORT_DIR), &tables)?;
    Ok(tables)
}
