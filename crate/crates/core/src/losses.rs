//! Cross-entropy, focal loss and their class-weighted variants over softmax
//! outputs, with analytic gradients with respect to the logits.
//!
//! Every kind here has the per-sample form
//!
//! ```text
//! loss_s = w_c * (1 - p_t)^gamma * -ln(p_t)
//! ```
//!
//! where `p_t` is the probability of the true class, `w_c` is the class
//! weight (1 for the unweighted kinds) and `gamma` is 0 for the CE kinds.
//! The gradient of such a loss with respect to the logits is a per-sample
//! scalar times `p - onehot(t)`, which keeps the reductions (all-ones
//! weights, `gamma = 0`) exact down to the bit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Probabilities are clipped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before `ln`.
pub const PROB_CLAMP: f64 = 1e-12;
pub const DEFAULT_GAMMA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Ce,
    Focal,
    CdbWCe,
    CdbWFl,
    InvFreqCe,
}

impl LossKind {
    pub const ALL: [LossKind; 5] =
        [LossKind::Ce, LossKind::Focal, LossKind::CdbWCe, LossKind::CdbWFl, LossKind::InvFreqCe];

    pub fn needs_class_weights(self) -> bool {
        matches!(self, LossKind::CdbWCe | LossKind::CdbWFl | LossKind::InvFreqCe)
    }

    /// Whether the class weights come from difficulty snapshots.
    pub fn uses_difficulty(self) -> bool {
        matches!(self, LossKind::CdbWCe | LossKind::CdbWFl)
    }

    pub fn is_focal(self) -> bool {
        matches!(self, LossKind::Focal | LossKind::CdbWFl)
    }

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Ce => "ce",
            LossKind::Focal => "focal",
            LossKind::CdbWCe => "cdb_w_ce",
            LossKind::CdbWFl => "cdb_w_fl",
            LossKind::InvFreqCe => "inv_freq_ce",
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
            let valid: Vec<_> = LossKind::ALL.iter().map(|k| k.name()).collect();
            Error::Config(format!("unknown loss {s:?}; valid kinds: {}", valid.join(", ")))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub gamma: f64,
    pub class_weights: Option<Vec<f64>>,
}

impl LossSpec {
    pub fn new(kind: LossKind) -> Self {
        Self { kind, gamma: DEFAULT_GAMMA, class_weights: None }
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Self {
        self.class_weights = Some(weights);
        self
    }

    fn gamma(&self) -> f64 {
        if self.kind.is_focal() {
            self.gamma
        } else {
            0.0
        }
    }

    fn check(&self, num_classes: usize) -> Result<()> {
        if self.kind.is_focal() && !(self.gamma >= 0.0) {
            return Err(Error::Config(format!("gamma must be >= 0, got {}", self.gamma)));
        }
        if !self.kind.needs_class_weights() {
            return Ok(());
        }
        let w = self.class_weights.as_ref().ok_or_else(|| {
            Error::Config(format!("loss {} requires class weights", self.kind))
        })?;
        if w.len() != num_classes {
            return Err(Error::Config(format!(
                "{} class weights for {num_classes} classes",
                w.len()
            )));
        }
        if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::Config("class weights must be finite and non-negative".into()));
        }
        Ok(())
    }

    #[inline]
    fn class_weight(&self, class: usize) -> Option<f64> {
        if self.kind.needs_class_weights() {
            self.class_weights.as_ref().map(|w| w[class])
        } else {
            None
        }
    }

    /// The multiplier this loss puts on a sample's `-ln p_t` term:
    /// class weight times focal factor.
    pub fn sample_weight(&self, p_true: f64, class: usize) -> f64 {
        let p = clamp_prob(p_true);
        let focal = if self.kind.is_focal() { (1.0 - p).powf(self.gamma) } else { 1.0 };
        match self.class_weight(class) {
            Some(w) => w * focal,
            None => focal,
        }
    }
}

/// Softmax rows paired with true labels.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchProbs {
    pub probs: Matrix,
    pub labels: Vec<usize>,
}

impl BatchProbs {
    pub fn new(probs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if probs.rows() != labels.len() {
            return Err(Error::Consistency(format!(
                "{} probability rows for {} labels",
                probs.rows(),
                labels.len()
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= probs.cols()) {
            return Err(Error::Consistency(format!("label {l} out of range")));
        }
        Ok(Self { probs, labels })
    }

    pub fn from_logits(logits: &Matrix, labels: Vec<usize>) -> Result<Self> {
        Self::new(softmax_rows(logits), labels)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.probs.cols()
    }

    #[inline]
    pub fn p_true(&self, s: usize) -> f64 {
        self.probs.get(s, self.labels[s])
    }
}

#[inline]
pub fn clamp_prob(p: f64) -> f64 {
    p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Per-sample losses and their arithmetic mean.
pub fn loss_forward(spec: &LossSpec, batch: &BatchProbs) -> Result<(Vec<f64>, f64)> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    spec.check(batch.num_classes())?;
    let gamma = spec.gamma();
    let per_sample: Vec<f64> = (0..batch.len())
        .map(|s| {
            let p = clamp_prob(batch.p_true(s));
            let ce = -p.ln();
            let base = if spec.kind.is_focal() { (1.0 - p).powf(gamma) * ce } else { ce };
            match spec.class_weight(batch.labels[s]) {
                Some(w) => w * base,
                None => base,
            }
        })
        .collect();
    let mean = per_sample.iter().sum::<f64>() / per_sample.len() as f64;
    Ok((per_sample, mean))
}

/// Gradient of the mean loss with respect to the logits that produced
/// `batch.probs`.
pub fn loss_backward(spec: &LossSpec, batch: &BatchProbs) -> Result<Matrix> {
    if batch.is_empty() {
        return Err(Error::Config("empty batch".into()));
    }
    spec.check(batch.num_classes())?;
    let n = batch.len() as f64;
    let mut grad = batch.probs.clone();
    for s in 0..batch.len() {
        let t = batch.labels[s];
        let coef = logit_coefficient(spec, batch.p_true(s), t);
        let scale = coef / n;
        let row = grad.row_mut(s);
        row[t] -= 1.0;
        for g in row.iter_mut() {
            *g *= scale;
        }
    }
    Ok(grad)
}

/// `c` such that `d loss_s / d z = c * (p - onehot)`.
fn logit_coefficient(spec: &LossSpec, p_true: f64, class: usize) -> f64 {
    let focal = if spec.kind.is_focal() {
        // d/dz of -(1-p)^g ln p  =  [(1-p)^g - g p (1-p)^(g-1) ln p] (p - onehot)
        let p = clamp_prob(p_true);
        let g = spec.gamma;
        (1.0 - p).powf(g) - g * p * (1.0 - p).powf(g - 1.0) * p.ln()
    } else {
        1.0
    };
    match spec.class_weight(class) {
        Some(w) => w * focal,
        None => focal,
    }
}

/// Inverse-frequency class weights normalised to average one.
pub fn inv_freq_weights(class_counts: &[usize]) -> Result<Vec<f64>> {
    if class_counts.is_empty() {
        return Err(Error::Config("no classes".into()));
    }
    if let Some(c) = class_counts.iter().position(|&m| m == 0) {
        return Err(Error::Config(format!("class {c} has no training samples")));
    }
    let inv: Vec<f64> = class_counts.iter().map(|&m| 1.0 / m as f64).collect();
    let total: f64 = inv.iter().sum();
    let n = class_counts.len() as f64;
    Ok(inv.iter().map(|&w| w * n / total).collect())
}
