//! Test metrics, shot-group breakdowns and hard-instance counting.

mod report;

pub use report::{report_tables, RunSummary, Tables, REPORT_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::trainer::MlpModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Shot {
    Many,
    Medium,
    Few,
}

/// Class partition by training count: many-shot `> many_above`, few-shot
/// `<= few_at_most`, medium in between.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotGroups {
    pub many_above: usize,
    pub few_at_most: usize,
}

impl Default for ShotGroups {
    fn default() -> Self {
        Self { many_above: 100, few_at_most: 20 }
    }
}

impl ShotGroups {
    pub fn shot(&self, train_count: usize) -> Shot {
        if train_count > self.many_above {
            Shot::Many
        } else if train_count > self.few_at_most {
            Shot::Medium
        } else {
            Shot::Few
        }
    }

    pub fn assign(&self, train_counts: &[usize]) -> Vec<Shot> {
        train_counts.iter().map(|&c| self.shot(c)).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ShotAccuracies {
    pub many: Option<f64>,
    pub medium: Option<f64>,
    pub few: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTail {
    pub head_classes: Vec<usize>,
    pub head_precision: f64,
    pub head_recall: f64,
    pub tail_precision: f64,
    pub tail_recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub num_samples: usize,
    pub num_classes: usize,
    pub top1: f64,
    pub top5: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub per_class_accuracy: Vec<f64>,
    pub per_class_precision: Vec<f64>,
    pub test_counts: Vec<usize>,
    pub shot_accuracies: ShotAccuracies,
    pub head_tail: HeadTail,
}

impl MetricsReport {
    /// Top-1 error in percent.
    pub fn error_pct(&self) -> f64 {
        100.0 * (1.0 - self.top1)
    }
}

/// Settings for [`evaluate`] that do not come from the model or test set.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Training counts used for shot groups and the head set; defaults to
    /// the test counts.
    pub train_counts: Option<Vec<usize>>,
    pub shots: ShotGroups,
    pub head_k: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self { train_counts: None, shots: ShotGroups::default(), head_k: 1 }
    }
}

/// Argmax with ties going to the lowest class index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = c;
        }
    }
    best
}

/// Position of `class` when classes are sorted by descending probability,
/// ties broken by lower index first.
pub fn rank_of(row: &[f64], class: usize) -> usize {
    let p = row[class];
    row.iter()
        .enumerate()
        .filter(|&(j, &q)| q > p || (q == p && j < class))
        .count()
}

pub fn predict(probs: &Matrix) -> Vec<usize> {
    (0..probs.rows()).map(|r| argmax(probs.row(r))).collect()
}

/// The `k` classes with the largest counts, ties to the lower index.
pub fn top_k_classes(counts: &[usize], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

pub fn evaluate(model: &MlpModel, test_set: &LabeledDataset, opts: &EvalOptions) -> Result<MetricsReport> {
    let probs = model.predict_proba(test_set.features())?;
    evaluate_probs(&probs, test_set.labels(), opts)
}

/// Metrics from class probabilities and true labels.
pub fn evaluate_probs(probs: &Matrix, labels: &[usize], opts: &EvalOptions) -> Result<MetricsReport> {
    let n = labels.len();
    let k = probs.cols();
    if n == 0 || probs.rows() != n {
        return Err(Error::Config(format!("{} probability rows for {n} test labels", probs.rows())));
    }
    let mut confusion = vec![vec![0usize; k]; k];
    let mut top5_hits = 0usize;
    for (r, &t) in labels.iter().enumerate() {
        if t >= k {
            return Err(Error::Consistency(format!("test label {t} outside {k} classes")));
        }
        let row = probs.row(r);
        confusion[t][argmax(row)] += 1;
        if rank_of(row, t) < 5 {
            top5_hits += 1;
        }
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted: Vec<usize> = (0..k).map(|c| confusion.iter().map(|r| r[c]).sum()).collect();
    let per_class_accuracy: Vec<f64> = (0..k)
        .map(|c| if support[c] > 0 { confusion[c][c] as f64 / support[c] as f64 } else { 0.0 })
        .collect();
    let per_class_precision: Vec<f64> = (0..k)
        .map(|c| if predicted[c] > 0 { confusion[c][c] as f64 / predicted[c] as f64 } else { 0.0 })
        .collect();
    let correct: usize = (0..k).map(|c| confusion[c][c]).sum();

    let present: Vec<usize> = (0..k).filter(|&c| support[c] > 0).collect();
    let mean_over = |xs: &[f64], cls: &[usize]| -> f64 {
        if cls.is_empty() {
            0.0
        } else {
            cls.iter().map(|&c| xs[c]).sum::<f64>() / cls.len() as f64
        }
    };

    let train_counts = opts.train_counts.clone().unwrap_or_else(|| support.clone());
    if train_counts.len() != k {
        return Err(Error::Config(format!("{} training counts for {k} classes", train_counts.len())));
    }
    let shots = opts.shots.assign(&train_counts);
    let group_acc = |which: Shot| -> Option<f64> {
        let (hit, tot) = (0..k)
            .filter(|&c| shots[c] == which)
            .fold((0usize, 0usize), |(h, t), c| (h + confusion[c][c], t + support[c]));
        (tot > 0).then(|| hit as f64 / tot as f64)
    };

    let head_classes = top_k_classes(&train_counts, opts.head_k.min(k));
    let tail_classes: Vec<usize> = (0..k).filter(|c| !head_classes.contains(c)).collect();
    let with_support = |cls: &[usize]| -> Vec<usize> { cls.iter().copied().filter(|&c| support[c] > 0).collect() };

    Ok(MetricsReport {
        num_samples: n,
        num_classes: k,
        top1: correct as f64 / n as f64,
        top5: top5_hits as f64 / n as f64,
        macro_precision: mean_over(&per_class_precision, &(0..k).collect::<Vec<_>>()),
        macro_recall: mean_over(&per_class_accuracy, &present),
        shot_accuracies: ShotAccuracies {
            many: group_acc(Shot::Many),
            medium: group_acc(Shot::Medium),
            few: group_acc(Shot::Few),
        },
        head_tail: HeadTail {
            head_precision: mean_over(&per_class_precision, &head_classes),
            head_recall: mean_over(&per_class_accuracy, &with_support(&head_classes)),
            tail_precision: mean_over(&per_class_precision, &tail_classes),
            tail_recall: mean_over(&per_class_accuracy, &with_support(&tail_classes)),
            head_classes,
        },
        per_class_accuracy,
        per_class_precision,
        test_counts: support,
    })
}

/// Samples whose weight exceeds the threshold, per shot group.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct HardCounts {
    pub many: usize,
    pub medium: usize,
    pub few: usize,
    pub many_classes: usize,
    pub medium_classes: usize,
    pub few_classes: usize,
}

impl HardCounts {
    fn avg(count: usize, classes: usize) -> f64 {
        if classes == 0 {
            0.0
        } else {
            count as f64 / classes as f64
        }
    }

    /// Hard samples per class in the many-shot group.
    pub fn many_avg(&self) -> f64 {
        Self::avg(self.many, self.many_classes)
    }

    pub fn medium_avg(&self) -> f64 {
        Self::avg(self.medium, self.medium_classes)
    }

    pub fn few_avg(&self) -> f64 {
        Self::avg(self.few, self.few_classes)
    }
}

/// Counts samples with `weight > threshold` in each shot group. The groups
/// are assigned from the class counts of `labels` itself. A threshold of 0
/// counts every sample.
pub fn hard_instance_counts(
    weights_per_sample: &[f64],
    labels: &[usize],
    num_classes: usize,
    groups: &ShotGroups,
    threshold: f64,
) -> Result<HardCounts> {
    if weights_per_sample.len() != labels.len() {
        return Err(Error::Consistency(format!(
            "{} weights for {} samples",
            weights_per_sample.len(),
            labels.len()
        )));
    }
    let mut counts = vec![0usize; num_classes];
    for &l in labels {
        if l >= num_classes {
            return Err(Error::Consistency(format!("label {l} outside {num_classes} classes")));
        }
        counts[l] += 1;
    }
    let shots = groups.assign(&counts);
    let mut out = HardCounts::default();
    for s in &shots {
        match s {
            Shot::Many => out.many_classes += 1,
            Shot::Medium => out.medium_classes += 1,
            Shot::Few => out.few_classes += 1,
        }
    }
    for (&w, &l) in weights_per_sample.iter().zip(labels) {
        if threshold > 0.0 && !(w > threshold) {
            continue;
        }
        match shots[l] {
            Shot::Many => out.many += 1,
            Shot::Medium => out.medium += 1,
            Shot::Few => out.few += 1,
        }
    }
    Ok(out)
}
