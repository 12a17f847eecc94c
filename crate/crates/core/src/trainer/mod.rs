//! Model, optimiser and the difficulty-driven training loop.
//!
//! Before every `tau.interval`-th epoch the model is scored on the balanced
//! validation split. The per-class accuracies give difficulties and the
//! accuracy bias, the bias gives `tau`, and `d_c^tau` becomes the loss class
//! weights and (for CDB-S) the class sampling masses used until the next
//! snapshot. Epoch 0 runs with the all-difficult initial state, i.e. unit
//! weights and a uniform class distribution for CDB-S.

pub mod checkpoint;
pub mod config;
pub mod log;
pub mod model;
pub mod optim;

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

pub use config::{ClassifierMethod, Method, Stage2Config, TrainConfig};
pub use log::{MetricRecord, LOG_SCHEMA_VERSION};
pub use model::{MlpModel, TrainMode};
pub use optim::{LrSchedule, Sgd};

use crate::data::{derive_seed, rng_from_seed, LabeledDataset};
use crate::difficulty::{class_accuracy, class_weights, ClassState};
use crate::error::{Error, Result};
use crate::eval::{evaluate, hard_instance_counts, predict, EvalOptions, MetricsReport};
use crate::losses::{inv_freq_weights, loss_backward, loss_forward, BatchProbs, LossKind, LossSpec};
use crate::sampling::{class_distribution, draw_epoch, SamplerSpec};

// stream tags for derive_seed
const SEED_INIT: u64 = 0;
const SEED_EPOCH: u64 = 1;
const SEED_STAGE2: u64 = 2;

/// The three disjoint datasets of one run.
#[derive(Debug, Clone, Copy)]
pub struct Splits<'a> {
    pub train: &'a LabeledDataset,
    /// Balanced split used only for difficulty snapshots.
    pub validation: &'a LabeledDataset,
    pub test: &'a LabeledDataset,
}

/// Everything [`train_epoch`] needs besides the model and data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochPlan {
    pub stage: usize,
    pub epoch: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub epoch_size: usize,
    pub seed: u64,
    pub mode: TrainMode,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct TrainedRun {
    pub model: MlpModel,
    pub log: Vec<MetricRecord>,
    /// Test metrics of the final model.
    pub metrics: MetricsReport,
    /// Test metrics after stage 1 of a decoupled run.
    pub stage1_metrics: Option<MetricsReport>,
    pub warnings: Vec<String>,
    pub config_hash: String,
}

impl TrainedRun {
    pub fn log_jsonl(&self) -> String {
        log::to_jsonl(&self.log)
    }
}

/// One pass of `plan.epoch_size` draws from `distribution`, in batches of
/// `plan.batch_size`, each followed by an SGD step.
pub fn train_epoch(
    model: &mut MlpModel,
    optimizer: &mut Sgd,
    train: &LabeledDataset,
    loss: &LossSpec,
    distribution: &[f64],
    plan: &EpochPlan,
) -> Result<EpochStats> {
    if plan.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let indices = draw_epoch(distribution, train, plan.epoch_size, plan.seed)?;
    let mut total = 0.0;
    let mut steps = 0;
    for (b, chunk) in indices.chunks(plan.batch_size).enumerate() {
        let x = train.features().select_rows(chunk);
        let labels: Vec<usize> = chunk.iter().map(|&i| train.labels()[i]).collect();
        let cache = model.forward(&x)?;
        let batch = BatchProbs::new(cache.probs.clone(), labels)?;
        let (per_sample, mean) = loss_forward(loss, &batch)?;
        if !mean.is_finite() {
            return Err(Error::NonFinite { epoch: plan.epoch, batch: b, loss: mean });
        }
        let grad_logits = loss_backward(loss, &batch)?;
        let grads = model.backward(&x, &cache, &grad_logits, plan.mode);
        optimizer.step(model, &grads, plan.lr, plan.mode);
        total += per_sample.iter().sum::<f64>();
        steps += 1;
    }
    let mean_loss = if indices.is_empty() { 0.0 } else { total / indices.len() as f64 };
    Ok(EpochStats { mean_loss, steps })
}

/// Per-class accuracy of `model` on `set`.
pub fn measure(model: &MlpModel, set: &LabeledDataset, epoch: usize) -> Result<ClassState> {
    let probs = model.predict_proba(set.features())?;
    class_accuracy(&predict(&probs), set.labels(), set.num_classes(), epoch)
}

/// Loss for one stage given the current difficulty weights.
fn loss_spec(kind: LossKind, gamma: f64, weights: &[f64], train_counts: &[usize]) -> Result<LossSpec> {
    let spec = LossSpec::new(kind).with_gamma(gamma);
    Ok(match kind {
        LossKind::CdbWCe | LossKind::CdbWFl => spec.with_weights(weights.to_vec()),
        LossKind::InvFreqCe => spec.with_weights(inv_freq_weights(train_counts)?),
        _ => spec,
    })
}

struct Stage {
    index: usize,
    loss: LossKind,
    sampler: SamplerSpec,
    epochs: usize,
    lr: f64,
    lr_schedule: LrSchedule,
    mode: TrainMode,
}

fn run_stage(
    model: &mut MlpModel,
    cfg: &TrainConfig,
    stage: &Stage,
    splits: Splits<'_>,
    log: &mut Vec<MetricRecord>,
) -> Result<()> {
    let train = splits.train;
    let n = train.num_classes();
    let counts = train.class_counts();
    let epoch_size = stage.sampler.epoch_size.unwrap_or(train.len());
    let mut optimizer = Sgd::new(cfg.momentum, cfg.weight_decay);

    let mut state = ClassState::initial(n);
    let mut tau = cfg.tau.tau(0.0)?;
    let mut weights = class_weights(&state.difficulties, tau);

    for epoch in 0..=stage.epochs {
        let due = epoch > 0 && (epoch % cfg.tau.interval == 0 || epoch == stage.epochs);
        if due {
            state = measure(model, splits.validation, epoch)?;
            // rounding can nudge the bias a hair past its bound
            let bias = state.bias(cfg.tau.epsilon).min(cfg.tau.bias_max());
            tau = cfg.tau.tau(bias)?;
            weights = class_weights(&state.difficulties, tau);
            let hard_instances = if cfg.track_hard {
                let spec = loss_spec(stage.loss, cfg.gamma, &weights, counts)?;
                let probs = model.predict_proba(train.features())?;
                let batch = BatchProbs::new(probs, train.labels().to_vec())?;
                let w: Vec<f64> =
                    (0..batch.len()).map(|s| spec.sample_weight(batch.p_true(s), batch.labels[s])).collect();
                Some(hard_instance_counts(&w, train.labels(), n, &cfg.shots, cfg.hard_threshold)?)
            } else {
                None
            };
            log.push(MetricRecord::Snapshot {
                schema: LOG_SCHEMA_VERSION,
                stage: stage.index,
                epoch,
                accuracies: state.accuracies.clone(),
                difficulties: state.difficulties.clone(),
                bias,
                tau,
                class_weights: weights.clone(),
                hard_instances,
            });
        }
        if epoch == stage.epochs {
            break;
        }

        let spec = loss_spec(stage.loss, cfg.gamma, &weights, counts)?;
        let distribution = class_distribution(&stage.sampler, &state.difficulties, tau, counts)?;
        let plan = EpochPlan {
            stage: stage.index,
            epoch,
            lr: stage.lr_schedule.lr(stage.lr, epoch, stage.epochs),
            batch_size: cfg.batch_size,
            epoch_size,
            seed: derive_seed(cfg.seed, &[SEED_EPOCH, stage.index as u64, epoch as u64]),
            mode: stage.mode,
        };
        let stats = train_epoch(model, &mut optimizer, train, &spec, &distribution, &plan)?;
        log.push(MetricRecord::Epoch {
            schema: LOG_SCHEMA_VERSION,
            stage: stage.index,
            epoch,
            lr: plan.lr,
            mean_loss: stats.mean_loss,
            steps: stats.steps,
            class_distribution: distribution,
        });
    }
    Ok(())
}

fn row_hash(row: &[f64], label: usize) -> u64 {
    let mut h = DefaultHasher::new();
    for v in row {
        v.to_bits().hash(&mut h);
    }
    label.hash(&mut h);
    h.finish()
}

/// Structural checks on the splits; soft problems come back as warnings.
fn check_splits(splits: Splits<'_>) -> Result<Vec<String>> {
    let Splits { train, validation, test } = splits;
    let n = train.num_classes();
    for (name, ds) in [("validation", validation), ("test", test)] {
        if ds.dim() != train.dim() {
            return Err(Error::Consistency(format!(
                "{name} rows have {} features, training rows {}",
                ds.dim(),
                train.dim()
            )));
        }
        if ds.num_classes() != n {
            return Err(Error::Consistency(format!(
                "{name} split has {} classes, training split {n}",
                ds.num_classes()
            )));
        }
        if ds.is_empty() {
            return Err(Error::Capacity(format!("{name} split is empty")));
        }
    }
    if let Some(c) = validation.class_counts().iter().position(|&m| m == 0) {
        return Err(Error::Capacity(format!("validation split has no samples of class {c}")));
    }

    let mut warnings = Vec::new();
    if !validation.is_balanced() {
        warnings.push(format!(
            "validation split is not class-balanced (counts {:?}); difficulties will be noisier for small classes",
            validation.class_counts()
        ));
    }
    let seen: HashSet<u64> = (0..train.len()).map(|i| row_hash(train.features().row(i), train.labels()[i])).collect();
    let overlap = (0..validation.len())
        .filter(|&i| seen.contains(&row_hash(validation.features().row(i), validation.labels()[i])))
        .count();
    if overlap > 0 {
        warnings.push(format!(
            "{overlap} of {} validation rows also appear in the training split; \
             difficulties measured on training data overestimate accuracy",
            validation.len()
        ));
    }
    Ok(warnings)
}

fn eval_options(cfg: &TrainConfig, train: &LabeledDataset) -> EvalOptions {
    EvalOptions { train_counts: Some(train.class_counts().to_vec()), shots: cfg.shots, head_k: cfg.head_k }
}

fn final_record(stage: usize, metrics: &MetricsReport) -> MetricRecord {
    MetricRecord::Final { schema: LOG_SCHEMA_VERSION, stage, metrics: metrics.clone() }
}

fn stage_one(cfg: &TrainConfig, splits: Splits<'_>) -> Result<(MlpModel, Vec<MetricRecord>, MetricsReport, Vec<String>)> {
    cfg.validate()?;
    let warnings = check_splits(splits)?;
    let train = splits.train;
    let mut rng = rng_from_seed(derive_seed(cfg.seed, &[SEED_INIT]));
    let mut model = MlpModel::init(train.dim(), cfg.hidden_dim, train.num_classes(), &mut rng)?;
    let stage = Stage {
        index: 1,
        loss: cfg.loss,
        sampler: cfg.sampler.clone(),
        epochs: cfg.epochs,
        lr: cfg.lr,
        lr_schedule: cfg.lr_schedule.clone(),
        mode: TrainMode::Full,
    };
    let mut log = Vec::new();
    run_stage(&mut model, cfg, &stage, splits, &mut log)?;
    let metrics = evaluate(&model, splits.test, &eval_options(cfg, train))?;
    log.push(final_record(1, &metrics));
    Ok((model, log, metrics, warnings))
}

/// Trains as configured; runs with a `stage2` section go through
/// [`run_decoupled`].
pub fn run_training(cfg: &TrainConfig, splits: Splits<'_>) -> Result<TrainedRun> {
    if cfg.stage2.is_some() {
        return run_decoupled(cfg, splits);
    }
    let (model, log, metrics, warnings) = stage_one(cfg, splits)?;
    Ok(TrainedRun { model, log, metrics, stage1_metrics: None, warnings, config_hash: cfg.hash() })
}

/// Stage 1 as in [`run_training`], then classifier rebalancing: cRT
/// re-draws and retrains the classifier layer on frozen features, LWS
/// trains only per-class logit scales starting from one. Difficulty
/// snapshots restart with the stage.
pub fn run_decoupled(cfg: &TrainConfig, splits: Splits<'_>) -> Result<TrainedRun> {
    let s2 = cfg
        .stage2
        .clone()
        .ok_or_else(|| Error::Config("decoupled training needs a stage2 section".into()))?;
    if cfg.hidden_dim == 0 {
        return Err(Error::Config("decoupled training needs a hidden layer (model.hidden >= 1)".into()));
    }
    let (mut model, mut log, stage1, warnings) = stage_one(cfg, splits)?;

    let mode = match s2.classifier {
        ClassifierMethod::Crt => {
            model.reinit_classifier(&mut rng_from_seed(derive_seed(cfg.seed, &[SEED_STAGE2])));
            TrainMode::ClassifierOnly
        }
        ClassifierMethod::Lws => {
            model.scales = Some(vec![1.0; model.num_classes]);
            TrainMode::ScalesOnly
        }
    };
    // step milestones refer to stage-1 epochs; stage 2 keeps cosine or runs flat
    let lr_schedule = match cfg.lr_schedule {
        LrSchedule::Cosine => LrSchedule::Cosine,
        _ => LrSchedule::Constant,
    };
    let stage = Stage {
        index: 2,
        loss: s2.loss,
        sampler: SamplerSpec { kind: s2.sampler, ..cfg.sampler.clone() },
        epochs: s2.epochs,
        lr: s2.lr.unwrap_or(cfg.lr),
        lr_schedule,
        mode,
    };
    run_stage(&mut model, cfg, &stage, splits, &mut log)?;
    let metrics = evaluate(&model, splits.test, &eval_options(cfg, splits.train))?;
    log.push(final_record(2, &metrics));
    Ok(TrainedRun { model, log, metrics, stage1_metrics: Some(stage1), warnings, config_hash: cfg.hash() })
}
