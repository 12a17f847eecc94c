use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use anyhow::{Context, Result};
use cdb_core::eval::{report_tables, RunSummary, Tables};
use cdb_core::trainer::config::{parse_kv_lines, render_kv};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::train::open_experiment;
use super::{execute_run, load_prepared, run_id, write_tables, RunOutcome, REPORT_DIR};
use crate::manifest::{RunEntry, RunStatus};
use crate::settings::Settings;
use crate::UsageError;

/// How run seeds are chosen when `train.seed` is not itself swept.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    /// `base + hash(parameter tuple, repeat)`: every run gets its own seed.
    Derived,
    /// `base + repeat`: all settings of one repeat share a seed.
    Shared,
}

/// Sweep file: `key = v1 | v2 | ...` lines plus optional `sweep.repeats`
/// and `sweep.seeds = derived | shared`.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub dims: Vec<(String, Vec<String>)>,
    pub repeats: usize,
    pub seeds: SeedMode,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self { dims: Vec::new(), repeats: 1, seeds: SeedMode::Derived }
    }
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub params: BTreeMap<String, String>,
    pub settings: Settings,
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub runs: Vec<(SweepPoint, Result<RunOutcome, String>)>,
    /// `None` when every run failed.
    pub tables: Option<Tables>,
}

impl SweepOutcome {
    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|(_, r)| r.is_err()).count()
    }
}

impl SweepSpec {
    pub fn parse(text: &str) -> Result<Self> {
        let mut spec = SweepSpec::default();
        for (key, value) in parse_kv_lines(text)? {
            match key.as_str() {
                "sweep.repeats" => {
                    spec.repeats = value
                        .parse()
                        .ok()
                        .filter(|&n| n >= 1)
                        .ok_or_else(|| UsageError(format!("sweep.repeats must be a positive integer, got {value:?}")))?;
                }
                "sweep.seeds" => {
                    spec.seeds = match value.as_str() {
                        "derived" => SeedMode::Derived,
                        "shared" => SeedMode::Shared,
                        _ => return Err(UsageError(format!("sweep.seeds {value:?}; expected derived or shared")).into()),
                    }
                }
                k if k.starts_with("experiment.") || k.starts_with("data.") => {
                    return Err(UsageError(format!(
                        "{k} cannot be swept; the splits are prepared once per experiment"
                    ))
                    .into());
                }
                _ => {
                    if spec.dims.iter().any(|(k, _)| *k == key) {
                        return Err(UsageError(format!("{key} is listed twice in the sweep")).into());
                    }
                    let values: Vec<String> = value.split('|').map(|v| v.trim().to_string()).collect();
                    if values.iter().any(String::is_empty) {
                        return Err(UsageError(format!("{key}: empty value in {value:?}")).into());
                    }
                    spec.dims.push((key, values));
                }
            }
        }
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading sweep file {}", path.display()))?;
        Self::parse(&text).with_context(|| format!("in {}", path.display()))
    }

    /// Number of runs the sweep expands to.
    pub fn len(&self) -> usize {
        self.dims.iter().map(|(_, v)| v.len()).product::<usize>() * self.repeats
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Cartesian product in file order, last dimension fastest, repeats
    /// innermost.
    pub fn points(&self, base: &Settings) -> Result<Vec<SweepPoint>> {
        let mut tuples: Vec<Vec<(&str, &str)>> = vec![Vec::new()];
        for (key, values) in &self.dims {
            tuples = tuples
                .into_iter()
                .flat_map(|t| {
                    values.iter().map(move |v| {
                        let mut t = t.clone();
                        t.push((key.as_str(), v.as_str()));
                        t
                    })
                })
                .collect();
        }
        let seed_swept = self.dims.iter().any(|(k, _)| k == "train.seed");
        let mut points = Vec::with_capacity(self.len());
        for tuple in &tuples {
            for r in 0..self.repeats {
                let mut settings = base.clone();
                let mut params = BTreeMap::new();
                for &(k, v) in tuple {
                    settings.set(k, v).with_context(|| format!("sweep value {k} = {v}"))?;
                    params.insert(k.to_string(), v.to_string());
                }
                if self.repeats > 1 {
                    params.insert("repeat".to_string(), r.to_string());
                }
                if !seed_swept {
                    settings.train.seed = match self.seeds {
                        SeedMode::Derived => tuple_seed(base.train.seed, &params),
                        SeedMode::Shared => base.train.seed.wrapping_add(r as u64),
                    };
                }
                points.push(SweepPoint { params, settings });
            }
        }
        let mut seen: HashMap<String, usize> = HashMap::new();
        for (i, p) in points.iter().enumerate() {
            if let Some(j) = seen.insert(run_id(&p.settings), i) {
                return Err(UsageError(format!(
                    "sweep points {:?} and {:?} resolve to identical settings",
                    points[j].params, p.params
                ))
                .into());
            }
        }
        Ok(points)
    }
}

/// `base + h`, where `h` is the low 32 bits of the SHA-256 of the sorted
/// parameter tuple. Stable across platforms and processes.
pub fn tuple_seed(base: u64, params: &BTreeMap<String, String>) -> u64 {
    let kv: Vec<(String, String)> = params.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
    let digest = Sha256::digest(render_kv(&kv).as_bytes());
    let h = u32::from_be_bytes([digest[0], digest[1], digest[2], digest[3]]);
    base.wrapping_add(h as u64)
}

/// `cdb sweep`: runs every point on up to `jobs` threads, records each
/// outcome in the manifest, and writes the report tables of the
/// successful runs. A failing run does not stop the others.
pub fn sweep(base: &Settings, spec: &SweepSpec, jobs: usize) -> Result<SweepOutcome> {
    let points = spec.points(base)?;
    let data = load_prepared(base)?;
    let mut manifest = open_experiment(base)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .context("starting the worker pool")?;
    let results: Vec<Result<RunOutcome, String>> = pool.install(|| {
        points
            .par_iter()
            .map(|p| execute_run(&p.settings, &data, p.params.clone()).map_err(|e| format!("{e:#}")))
            .collect()
    });

    let mut summaries: Vec<RunSummary> = Vec::new();
    for (p, r) in points.iter().zip(&results) {
        let entry = match r {
            Ok(out) => {
                summaries.push(out.summary.clone());
                out.entry()
            }
            Err(msg) => RunEntry {
                run_id: run_id(&p.settings),
                config_hash: p.settings.hash(),
                seed: p.settings.train.seed,
                params: p.params.clone(),
                status: RunStatus::Failed,
                error: Some(msg.clone()),
                warnings: Vec::new(),
            },
        };
        manifest.upsert(entry);
    }
    manifest.save(&base.experiment_dir())?;

    let tables = if summaries.is_empty() {
        None
    } else {
        let t = report_tables(&summaries)?;
        write_tables(&base.experiment_dir().join(REPORT_DIR), &t)?;
        Some(t)
    };
    Ok(SweepOutcome { runs: points.into_iter().zip(results).collect(), tables })
}
