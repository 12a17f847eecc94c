//! Training configuration and its flat `section.key = value` text form.
//!
//! ```text
//! # comments start with '#'
//! train.epochs = 40
//! train.lr = 0.1
//! loss.kind = cdb_w_ce
//! tau.schedule = sigmoid
//! ```
//!
//! Keys are applied in order, so a later line overrides an earlier one.
//! `train.method` and `stage2.method` are presets that set both the loss and
//! the sampler of their stage. Unknown keys are errors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::difficulty::{TauKind, TauSchedule};
use crate::error::{Error, Result};
use crate::eval::ShotGroups;
use crate::losses::{LossKind, DEFAULT_GAMMA};
use crate::sampling::{SamplerKind, SamplerSpec};
use crate::trainer::optim::LrSchedule;

/// Second-stage classifier rebalancing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierMethod {
    /// Re-initialise and retrain the classifier layer on frozen features.
    Crt,
    /// Learn one positive scale per class logit, everything else frozen.
    Lws,
}

impl fmt::Display for ClassifierMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ClassifierMethod::Crt => "crt",
            ClassifierMethod::Lws => "lws",
        })
    }
}

impl FromStr for ClassifierMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "crt" => Ok(ClassifierMethod::Crt),
            "lws" => Ok(ClassifierMethod::Lws),
            _ => Err(Error::Config(format!("unknown classifier method {s:?}; expected crt or lws"))),
        }
    }
}

/// Named loss + sampler combinations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Method {
    Ce,
    Focal,
    CdbWCe,
    CdbWFl,
    CdbS,
    InvFreqCe,
    ClassFrequency,
    ClassAware,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Ce,
        Method::Focal,
        Method::CdbWCe,
        Method::CdbWFl,
        Method::CdbS,
        Method::InvFreqCe,
        Method::ClassFrequency,
        Method::ClassAware,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Ce => "ce",
            Method::Focal => "focal",
            Method::CdbWCe => "cdb_w_ce",
            Method::CdbWFl => "cdb_w_fl",
            Method::CdbS => "cdb_s",
            Method::InvFreqCe => "inv_freq_ce",
            Method::ClassFrequency => "cfs",
            Method::ClassAware => "class_aware",
        }
    }

    pub fn loss_and_sampler(self) -> (LossKind, SamplerKind) {
        match self {
            Method::Ce => (LossKind::Ce, SamplerKind::Uniform),
            Method::Focal => (LossKind::Focal, SamplerKind::Uniform),
            Method::CdbWCe => (LossKind::CdbWCe, SamplerKind::Uniform),
            Method::CdbWFl => (LossKind::CdbWFl, SamplerKind::Uniform),
            Method::CdbS => (LossKind::Ce, SamplerKind::CdbS),
            Method::InvFreqCe => (LossKind::InvFreqCe, SamplerKind::Uniform),
            Method::ClassFrequency => (LossKind::Ce, SamplerKind::ClassFrequency),
            Method::ClassAware => (LossKind::Ce, SamplerKind::ClassAware),
        }
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL.into_iter().find(|m| m.name() == s).ok_or_else(|| {
            let valid: Vec<_> = Method::ALL.iter().map(|m| m.name()).collect();
            Error::Config(format!("unknown method {s:?}; valid methods: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage2Config {
    pub classifier: ClassifierMethod,
    pub loss: LossKind,
    pub sampler: SamplerKind,
    pub epochs: usize,
    /// Falls back to the stage-1 learning rate.
    pub lr: Option<f64>,
}

impl Default for Stage2Config {
    fn default() -> Self {
        Self {
            classifier: ClassifierMethod::Crt,
            loss: LossKind::Ce,
            sampler: SamplerKind::ClassAware,
            epochs: 10,
            lr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub lr_schedule: LrSchedule,
    pub hidden_dim: usize,
    pub loss: LossKind,
    pub gamma: f64,
    pub sampler: SamplerSpec,
    pub tau: TauSchedule,
    pub seed: u64,
    pub stage2: Option<Stage2Config>,
    /// Log per-group hard-instance counts at every snapshot.
    pub track_hard: bool,
    pub hard_threshold: f64,
    pub shots: ShotGroups,
    /// Number of most frequent training classes treated as head classes.
    pub head_k: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 100,
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            lr_schedule: LrSchedule::Constant,
            hidden_dim: 64,
            loss: LossKind::Ce,
            gamma: DEFAULT_GAMMA,
            sampler: SamplerSpec::new(SamplerKind::Uniform),
            tau: TauSchedule::default(),
            seed: 0,
            stage2: None,
            track_hard: false,
            hard_threshold: 0.8,
            shots: ShotGroups::default(),
            head_k: 1,
        }
    }
}

/// Every key understood by [`TrainConfig::set`].
pub const TRAIN_KEYS: &[&str] = &[
    "train.method",
    "train.epochs",
    "train.batch_size",
    "train.lr",
    "train.momentum",
    "train.weight_decay",
    "train.lr_schedule",
    "train.milestones",
    "train.lr_factor",
    "train.seed",
    "train.epoch_size",
    "model.hidden",
    "loss.kind",
    "loss.gamma",
    "sampler.kind",
    "sampler.floor",
    "tau.schedule",
    "tau.max",
    "tau.epsilon",
    "tau.interval",
    "stage2.classifier",
    "stage2.method",
    "stage2.loss",
    "stage2.sampler",
    "stage2.epochs",
    "stage2.lr",
    "eval.track_hard",
    "eval.hard_threshold",
    "eval.many_shot",
    "eval.few_shot",
    "eval.head_k",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
}

fn parse_list(key: &str, value: &str) -> Result<Vec<usize>> {
    if value.trim().is_empty() {
        return Ok(Vec::new());
    }
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

impl TrainConfig {
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (key, value) in parse_kv_lines(text)? {
            cfg.set(&key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn stage2_mut(&mut self) -> &mut Stage2Config {
        self.stage2.get_or_insert_with(Stage2Config::default)
    }

    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "train.method" => {
                let (loss, sampler) = parse::<Method>(key, value)?.loss_and_sampler();
                self.loss = loss;
                self.sampler.kind = sampler;
            }
            "train.epochs" => self.epochs = parse(key, value)?,
            "train.batch_size" => self.batch_size = parse(key, value)?,
            "train.lr" => self.lr = parse(key, value)?,
            "train.momentum" => self.momentum = parse(key, value)?,
            "train.weight_decay" => self.weight_decay = parse(key, value)?,
            "train.lr_schedule" => {
                let old = std::mem::replace(&mut self.lr_schedule, LrSchedule::Constant);
                self.lr_schedule = match (value.parse::<LrSchedule>()?, old) {
                    (LrSchedule::Step { .. }, s @ LrSchedule::Step { .. }) => s,
                    (new, _) => new,
                };
            }
            "train.milestones" | "train.lr_factor" => {
                let (mut milestones, mut factor) = match &self.lr_schedule {
                    LrSchedule::Step { milestones, factor } => (milestones.clone(), *factor),
                    _ => (Vec::new(), 0.1),
                };
                if key == "train.milestones" {
                    milestones = parse_list(key, value)?;
                } else {
                    factor = parse(key, value)?;
                }
                self.lr_schedule = LrSchedule::Step { milestones, factor };
            }
            "train.seed" => self.seed = parse(key, value)?,
            "train.epoch_size" => {
                let n: usize = parse(key, value)?;
                self.sampler.epoch_size = (n > 0).then_some(n);
            }
            "model.hidden" => self.hidden_dim = parse(key, value)?,
            "loss.kind" => self.loss = value.parse()?,
            "loss.gamma" => self.gamma = parse(key, value)?,
            "sampler.kind" => self.sampler.kind = value.parse()?,
            "sampler.floor" => {
                self.sampler.floor = if value == "auto" { None } else { Some(parse(key, value)?) }
            }
            "tau.schedule" => self.tau.kind = value.parse::<TauKind>()?,
            "tau.max" => self.tau.tau_max = parse(key, value)?,
            "tau.epsilon" => self.tau.epsilon = parse(key, value)?,
            "tau.interval" => self.tau.interval = parse(key, value)?,
            "stage2.classifier" => {
                if value == "none" {
                    self.stage2 = None;
                } else {
                    self.stage2_mut().classifier = value.parse()?;
                }
            }
            "stage2.method" => {
                let (loss, sampler) = parse::<Method>(key, value)?.loss_and_sampler();
                let s2 = self.stage2_mut();
                s2.loss = loss;
                s2.sampler = sampler;
            }
            "stage2.loss" => self.stage2_mut().loss = value.parse()?,
            "stage2.sampler" => self.stage2_mut().sampler = value.parse()?,
            "stage2.epochs" => self.stage2_mut().epochs = parse(key, value)?,
            "stage2.lr" => {
                self.stage2_mut().lr = if value == "inherit" { None } else { Some(parse(key, value)?) }
            }
            "eval.track_hard" => self.track_hard = parse(key, value)?,
            "eval.hard_threshold" => self.hard_threshold = parse(key, value)?,
            "eval.many_shot" => self.shots.many_above = parse(key, value)?,
            "eval.few_shot" => self.shots.few_at_most = parse(key, value)?,
            "eval.head_k" => self.head_k = parse(key, value)?,
            _ => {
                return Err(Error::Config(format!(
                    "unknown config key {key:?}; known keys: {}",
                    TRAIN_KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.epochs", self.epochs as f64),
            ("train.batch_size", self.batch_size as f64),
        ];
        for (k, v) in positive {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("train.lr must be >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("train.momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("train.weight_decay must be >= 0".into()));
        }
        if !(self.gamma >= 0.0) {
            return Err(Error::Config("loss.gamma must be >= 0".into()));
        }
        if !(self.hard_threshold >= 0.0 && self.hard_threshold <= 1.0) {
            return Err(Error::Config("eval.hard_threshold must lie in [0, 1]".into()));
        }
        if self.shots.few_at_most >= self.shots.many_above {
            return Err(Error::Config("eval.few_shot must be below eval.many_shot".into()));
        }
        self.lr_schedule.validate(self.epochs)?;
        self.tau.validate()?;
        if let Some(s2) = &self.stage2 {
            if self.hidden_dim == 0 {
                return Err(Error::Config(
                    "decoupled training needs a hidden layer (model.hidden >= 1)".into(),
                ));
            }
            if s2.lr.is_some_and(|lr| !(lr >= 0.0)) {
                return Err(Error::Config("stage2.lr must be >= 0".into()));
            }
        }
        Ok(())
    }

    /// Explicit `key = value` pairs that reproduce this configuration.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| kv.push((k.to_string(), v));
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.lr.to_string());
        put("train.momentum", self.momentum.to_string());
        put("train.weight_decay", self.weight_decay.to_string());
        put("train.lr_schedule", self.lr_schedule.name().to_string());
        if let LrSchedule::Step { milestones, factor } = &self.lr_schedule {
            let m: Vec<String> = milestones.iter().map(usize::to_string).collect();
            put("train.milestones", m.join(","));
            put("train.lr_factor", factor.to_string());
        }
        put("train.seed", self.seed.to_string());
        put("train.epoch_size", self.sampler.epoch_size.unwrap_or(0).to_string());
        put("model.hidden", self.hidden_dim.to_string());
        put("loss.kind", self.loss.to_string());
        put("loss.gamma", self.gamma.to_string());
        put("sampler.kind", self.sampler.kind.to_string());
        put("sampler.floor", self.sampler.floor.map_or("auto".into(), |f| f.to_string()));
        put("tau.schedule", self.tau.kind.to_string());
        put("tau.max", self.tau.tau_max.to_string());
        put("tau.epsilon", self.tau.epsilon.to_string());
        put("tau.interval", self.tau.interval.to_string());
        match &self.stage2 {
            None => put("stage2.classifier", "none".into()),
            Some(s2) => {
                put("stage2.classifier", s2.classifier.to_string());
                put("stage2.loss", s2.loss.to_string());
                put("stage2.sampler", s2.sampler.to_string());
                put("stage2.epochs", s2.epochs.to_string());
                put("stage2.lr", s2.lr.map_or("inherit".into(), |l| l.to_string()));
            }
        }
        put("eval.track_hard", self.track_hard.to_string());
        put("eval.hard_threshold", self.hard_threshold.to_string());
        put("eval.many_shot", self.shots.many_above.to_string());
        put("eval.few_shot", self.shots.few_at_most.to_string());
        put("eval.head_k", self.head_k.to_string());
        kv
    }

    pub fn to_kv_text(&self) -> String {
        render_kv(&self.to_kv())
    }

    /// SHA-256 of the sorted canonical `key = value` lines, hex encoded.
    pub fn hash(&self) -> String {
        config_hash(&self.to_kv())
    }
}

pub fn render_kv(kv: &[(String, String)]) -> String {
    kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
}

/// Hash of a set of settings, independent of their order.
pub fn config_hash(kv: &[(String, String)]) -> String {
    let mut lines: Vec<String> = kv.iter().map(|(k, v)| format!("{k} = {v}")).collect();
    lines.sort();
    let digest = Sha256::digest(lines.join("\n").as_bytes());
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_kv_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
        })?;
        let k = k.trim();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        out.push((k.to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parse_and_round_trip() {
        let text = "\
# baseline
train.epochs = 200
train.lr = 0.1
train.weight_decay = 0.0001
train.milestones = 160, 180
loss.kind = cdb_w_ce
tau.schedule = fixed:1.5
stage2.classifier = lws
stage2.method = cdb_s
";
        let cfg = TrainConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.epochs, 200);
        assert_eq!(cfg.lr_schedule, LrSchedule::Step { milestones: vec![160, 180], factor: 0.1 });
        assert_eq!(cfg.tau.kind, TauKind::Fixed(1.5));
        let s2 = cfg.stage2.clone().unwrap();
        assert_eq!((s2.classifier, s2.loss, s2.sampler), (ClassifierMethod::Lws, LossKind::Ce, SamplerKind::CdbS));
        let again = TrainConfig::from_kv_text(&cfg.to_kv_text()).unwrap();
        assert_eq!(again, cfg);
        assert_eq!(again.hash(), cfg.hash());
    }

    #[test]
    fn unknown_key_is_error() {
        let err = TrainConfig::from_kv_text("train.lrr = 0.1").unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert!(TrainConfig::from_kv_text("train.lr 0.1").is_err());
        assert!(TrainConfig::from_kv_text("loss.kind = hinge").is_err());
    }

    #[test]
    fn validation() {
        assert!(TrainConfig::from_kv_text("train.epochs = 0").is_err());
        assert!(TrainConfig::from_kv_text("train.milestones = 5, 3").is_err());
        assert!(TrainConfig::from_kv_text("train.epochs = 10\ntrain.milestones = 10").is_err());
        assert!(TrainConfig::from_kv_text("model.hidden = 0\nstage2.classifier = crt").is_err());
        assert!(TrainConfig::from_kv_text("tau.schedule = poly:1").is_err());
    }

    #[test]
    fn method_presets() {
        let cfg = TrainConfig::from_kv_text("train.method = cdb_s").unwrap();
        assert_eq!((cfg.loss, cfg.sampler.kind), (LossKind::Ce, SamplerKind::CdbS));
        let cfg = TrainConfig::from_kv_text("train.method = cfs").unwrap();
        assert_eq!(cfg.sampler.kind, SamplerKind::ClassFrequency);
    }

    #[test]
    fn hash_ignores_order() {
        let a = vec![("a".to_string(), "1".to_string()), ("b".to_string(), "2".to_string())];
        let b = vec![a[1].clone(), a[0].clone()];
        assert_eq!(config_hash(&a), config_hash(&b));
        assert_eq!(config_hash(&a).len(), 64);
    }
}
