use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{Context, Result};
use cdb_core::eval::RunSummary;
use cdb_core::trainer::checkpoint::save_checkpoint;
use cdb_core::trainer::{run_training, Splits};
use cdb_core::MetricsReport;
use serde::{Deserialize, Serialize};

use super::{load_prepared, to_json, write_file, Prepared, EXPERIMENT_CFG, RUNS_DIR};
use crate::manifest::{ExperimentManifest, RunEntry, RunStatus};
use crate::settings::Settings;

/// `metrics.json` of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub schema_version: u32,
    pub metrics: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stage1_metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_id: String,
    pub dir: PathBuf,
    pub config_hash: String,
    pub summary: RunSummary,
    pub warnings: Vec<String>,
}

impl RunOutcome {
    pub fn entry(&self) -> RunEntry {
        RunEntry {
            run_id: self.run_id.clone(),
            config_hash: self.config_hash.clone(),
            seed: self.summary.seed,
            params: self.summary.params.clone(),
            status: RunStatus::Ok,
            error: None,
            warnings: self.warnings.clone(),
        }
    }
}

/// Directory name of a run: the first 12 hex digits of its settings hash.
pub fn run_id(s: &Settings) -> String {
    format!("run-{}", &s.hash()[..12])
}

/// Trains one configuration on prepared data and writes its artifacts.
/// Does not touch the experiment manifest.
pub fn execute_run(s: &Settings, data: &Prepared, params: BTreeMap<String, String>) -> Result<RunOutcome> {
    let id = run_id(s);
    let dump = || format!("run {id} failed; configuration:\n{}", s.to_text());
    s.train.validate().with_context(dump)?;
    let splits = Splits { train: &data.train, validation: &data.validation, test: &data.test };
    let run = run_training(&s.train, splits).with_context(dump)?;

    let dir = s.experiment_dir().join(RUNS_DIR).join(&id);
    let config_hash = s.hash();
    write_file(&dir.join("config.cfg"), s.to_text())?;
    write_file(&dir.join("log.jsonl"), run.log_jsonl())?;
    let metrics = RunMetrics {
        schema_version: cdb_core::eval::REPORT_SCHEMA_VERSION,
        metrics: run.metrics.clone(),
        stage1_metrics: run.stage1_metrics.clone(),
    };
    write_file(&dir.join("metrics.json"), to_json(&metrics))?;
    let summary = RunSummary { id: id.clone(), params, seed: s.train.seed, metrics: run.metrics };
    write_file(&dir.join("summary.json"), to_json(&summary))?;
    save_checkpoint(&dir, &run.model, s.train.seed, &config_hash)?;
    Ok(RunOutcome { run_id: id, dir, config_hash, summary, warnings: run.warnings })
}

/// Records the launch settings and returns the manifest to update.
pub(crate) fn open_experiment(s: &Settings) -> Result<ExperimentManifest> {
    let dir = s.experiment_dir();
    write_file(&dir.join(EXPERIMENT_CFG), s.to_text())?;
    let mut manifest =
        ExperimentManifest::load(&dir)?.unwrap_or_else(|| ExperimentManifest::new(&s.experiment_id, &s.hash(), &dir));
    manifest.config_hash = s.hash();
    manifest.output_dir = dir.display().to_string();
    Ok(manifest)
}

/// `cdb train`: one run on the prepared splits.
pub fn train(s: &Settings) -> Result<RunOutcome> {
    let data = load_prepared(s)?;
    let mut manifest = open_experiment(s)?;
    let result = execute_run(s, &data, BTreeMap::new());
    let entry = match &result {
        Ok(out) => out.entry(),
        Err(e) => RunEntry {
            run_id: run_id(s),
            config_hash: s.hash(),
            seed: s.train.seed,
            params: BTreeMap::new(),
            status: RunStatus::Failed,
            error: Some(format!("{e:#}")),
            warnings: Vec::new(),
        },
    };
    manifest.upsert(entry);
    manifest.save(&s.experiment_dir())?;
    result
}
