//! Experiment settings: the `experiment.*` and `data.*` keys plus every
//! training key, layered as defaults < config file < `CDB_OUTPUT_ROOT` <
//! command-line flags.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use cdb_core::data::ImbalanceProfile;
use cdb_core::trainer::config::{config_hash, parse_kv_lines, render_kv, TRAIN_KEYS};
use cdb_core::TrainConfig;

use crate::UsageError;

/// The one environment variable: overrides `experiment.root`.
pub const ENV_OUTPUT_ROOT: &str = "CDB_OUTPUT_ROOT";

pub const EXPERIMENT_KEYS: &[&str] = &["experiment.id", "experiment.root"];

pub const DATA_KEYS: &[&str] = &[
    "data.source",
    "data.images",
    "data.labels",
    "data.csv",
    "data.classes",
    "data.dims",
    "data.separation",
    "data.protocol",
    "data.head_ratio",
    "data.total",
    "data.head_class",
    "data.tail_class",
    "data.mu",
    "data.n_max",
    "data.val_per_class",
    "data.test_per_class",
    "data.seed",
];

/// Short flags accepted in place of full keys.
const ALIASES: &[(&str, &str)] = &[
    ("method", "train.method"),
    ("loss", "loss.kind"),
    ("tau", "tau.schedule"),
    ("sampler", "sampler.kind"),
    ("seed", "train.seed"),
    ("epochs", "train.epochs"),
    ("lr", "train.lr"),
    ("gamma", "loss.gamma"),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Source {
    Blobs,
    Idx,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Protocol {
    TwoClass,
    Exponential,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Blobs => "blobs",
            Source::Idx => "idx",
            Source::Csv => "csv",
        })
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Protocol::TwoClass => "two_class",
            Protocol::Exponential => "exponential",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataSettings {
    pub source: Source,
    pub images: Option<PathBuf>,
    pub labels: Option<PathBuf>,
    pub csv: Option<PathBuf>,
    /// Synthetic blobs only.
    pub classes: usize,
    pub dims: usize,
    pub separation: f64,
    pub protocol: Protocol,
    pub head_ratio: f64,
    pub total: usize,
    pub head_class: usize,
    pub tail_class: usize,
    pub mu: f64,
    pub n_max: usize,
    pub val_per_class: usize,
    pub test_per_class: usize,
    pub seed: u64,
}

impl Default for DataSettings {
    fn default() -> Self {
        Self {
            source: Source::Blobs,
            images: None,
            labels: None,
            csv: None,
            classes: 10,
            dims: 16,
            separation: 3.0,
            protocol: Protocol::Exponential,
            head_ratio: 0.99,
            total: 5000,
            head_class: 0,
            tail_class: 1,
            mu: 0.01,
            n_max: 500,
            val_per_class: 50,
            test_per_class: 100,
            seed: 0,
        }
    }
}

impl DataSettings {
    pub fn profile(&self) -> ImbalanceProfile {
        match self.protocol {
            Protocol::TwoClass => ImbalanceProfile::TwoClassHeadRatio { head_ratio: self.head_ratio, total: self.total },
            Protocol::Exponential => ImbalanceProfile::Exponential { mu: self.mu, n_max: self.n_max },
        }
    }

    fn to_kv(&self) -> Vec<(String, String)> {
        let path = |p: &Option<PathBuf>| p.as_ref().map_or(String::new(), |p| p.display().to_string());
        [
            ("data.source", self.source.to_string()),
            ("data.images", path(&self.images)),
            ("data.labels", path(&self.labels)),
            ("data.csv", path(&self.csv)),
            ("data.classes", self.classes.to_string()),
            ("data.dims", self.dims.to_string()),
            ("data.separation", self.separation.to_string()),
            ("data.protocol", self.protocol.to_string()),
            ("data.head_ratio", self.head_ratio.to_string()),
            ("data.total", self.total.to_string()),
            ("data.head_class", self.head_class.to_string()),
            ("data.tail_class", self.tail_class.to_string()),
            ("data.mu", self.mu.to_string()),
            ("data.n_max", self.n_max.to_string()),
            ("data.val_per_class", self.val_per_class.to_string()),
            ("data.test_per_class", self.test_per_class.to_string()),
            ("data.seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Settings {
    pub experiment_id: String,
    pub root: PathBuf,
    pub data: DataSettings,
    pub train: TrainConfig,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            experiment_id: "default".into(),
            root: PathBuf::from("experiments"),
            data: DataSettings::default(),
            train: TrainConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| UsageError(format!("{key}: cannot parse {value:?}")).into())
}

fn opt_path(value: &str) -> Option<PathBuf> {
    (!value.is_empty()).then(|| PathBuf::from(value))
}

impl Settings {
    /// Applies one `key = value` setting from any layer.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        let d = &mut self.data;
        match key {
            "experiment.id" => {
                if value.is_empty() || value.contains(['/', '\\']) || value.starts_with('.') {
                    return Err(UsageError(format!("experiment.id {value:?} must be a plain directory name")).into());
                }
                self.experiment_id = value.to_string();
            }
            "experiment.root" => self.root = PathBuf::from(value),
            "data.source" => {
                d.source = match value {
                    "blobs" => Source::Blobs,
                    "idx" => Source::Idx,
                    "csv" => Source::Csv,
                    _ => return Err(UsageError(format!("data.source {value:?}; expected blobs, idx or csv")).into()),
                }
            }
            "data.images" => d.images = opt_path(value),
            "data.labels" => d.labels = opt_path(value),
            "data.csv" => d.csv = opt_path(value),
            "data.classes" => d.classes = parse(key, value)?,
            "data.dims" => d.dims = parse(key, value)?,
            "data.separation" => d.separation = parse(key, value)?,
            "data.protocol" => {
                d.protocol = match value {
                    "two_class" => Protocol::TwoClass,
                    "exponential" => Protocol::Exponential,
                    _ => {
                        return Err(UsageError(format!("data.protocol {value:?}; expected two_class or exponential")).into())
                    }
                }
            }
            "data.head_ratio" => d.head_ratio = parse(key, value)?,
            "data.total" => d.total = parse(key, value)?,
            "data.head_class" => d.head_class = parse(key, value)?,
            "data.tail_class" => d.tail_class = parse(key, value)?,
            "data.mu" => d.mu = parse(key, value)?,
            "data.n_max" => d.n_max = parse(key, value)?,
            "data.val_per_class" => d.val_per_class = parse(key, value)?,
            "data.test_per_class" => d.test_per_class = parse(key, value)?,
            "data.seed" => d.seed = parse(key, value)?,
            _ if TRAIN_KEYS.contains(&key) => self.train.set(key, value)?,
            _ => {
                let known: Vec<&str> =
                    EXPERIMENT_KEYS.iter().chain(DATA_KEYS).chain(TRAIN_KEYS).copied().collect();
                return Err(UsageError(format!("unknown setting {key:?}; known keys: {}", known.join(", "))).into());
            }
        }
        Ok(())
    }

    /// Resolves all layers. `overrides` are `--key value` / `--key=value`
    /// tokens from the command line.
    pub fn resolve(config_file: Option<&Path>, env_root: Option<String>, overrides: &[String]) -> Result<Self> {
        let mut s = Settings::default();
        if let Some(path) = config_file {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("reading config file {}: {e}", path.display())))?;
            for (k, v) in parse_kv_lines(&text).with_context(|| format!("in {}", path.display()))? {
                s.set(&k, &v).with_context(|| format!("in {}", path.display()))?;
            }
        }
        if let Some(root) = env_root.filter(|r| !r.is_empty()) {
            s.root = PathBuf::from(root);
        }
        for (k, v) in parse_overrides(overrides)? {
            s.set(&k, &v)?;
        }
        s.train.validate()?;
        s.data.profile().validate()?;
        Ok(s)
    }

    pub fn experiment_dir(&self) -> PathBuf {
        self.root.join(&self.experiment_id)
    }

    /// Canonical settings, without the output root (moving an experiment
    /// does not change its hash).
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv = vec![("experiment.id".to_string(), self.experiment_id.clone())];
        kv.extend(self.data.to_kv());
        kv.extend(self.train.to_kv());
        kv
    }

    pub fn to_text(&self) -> String {
        render_kv(&self.to_kv())
    }

    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }

    pub fn data_hash(&self) -> String {
        config_hash(&self.data.to_kv())
    }
}

/// Turns `--key value` and `--key=value` tokens into pairs, expanding aliases.
pub fn parse_overrides(tokens: &[String]) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut it = tokens.iter();
    while let Some(tok) = it.next() {
        let Some(flag) = tok.strip_prefix("--") else {
            return Err(UsageError(format!("unexpected argument {tok:?}; settings are given as --section.key value")).into());
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| UsageError(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        let key = ALIASES.iter().find(|(a, _)| *a == key).map_or(key, |(_, full)| full.to_string());
        out.push((key, value));
    }
    Ok(out)
}
