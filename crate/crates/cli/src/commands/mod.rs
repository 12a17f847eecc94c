//! The four subcommands and the on-disk experiment layout:
//!
//! ```text
//! <root>/<experiment.id>/
//!   experiment.cfg        settings the experiment was last launched with
//!   manifest.json
//!   data/                 train.csv val.csv test.csv data.json
//!   runs/run-<hash12>/    config.cfg log.jsonl metrics.json summary.json model.bin model.json
//!   report/               runs.csv summary.csv [decoupled.csv] summary.json
//! ```

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use sha2::{Digest, Sha256};

mod prepare;
mod report;
mod sweep;
mod train;

pub use prepare::{load_prepared, prepare, DataManifest, Prepared, DATA_MANIFEST_VERSION};
pub use report::{report, write_tables};
pub use sweep::{sweep, tuple_seed, SeedMode, SweepOutcome, SweepPoint, SweepSpec};
pub use train::{execute_run, run_id, train, RunOutcome, RunMetrics};

pub const DATA_DIR: &str = "data";
pub const RUNS_DIR: &str = "runs";
pub const REPORT_DIR: &str = "report";
pub const EXPERIMENT_CFG: &str = "experiment.cfg";

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("plain data serialises") + "\n"
}
