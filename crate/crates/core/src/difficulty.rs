//! Per-class accuracy, class difficulty, performance bias and the focusing
//! exponent `tau`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_TAU_MAX: f64 = 5.0;
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Per-class accuracy snapshot on the balanced difficulty split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassState {
    pub accuracies: Vec<f64>,
    pub difficulties: Vec<f64>,
    pub correct_counts: Vec<usize>,
    pub totals: Vec<usize>,
    pub epoch: usize,
}

impl ClassState {
    /// State before any measurement: every class fully difficult, zero
    /// accuracy, so weights are all one and bias is zero.
    pub fn initial(num_classes: usize) -> Self {
        Self {
            accuracies: vec![0.0; num_classes],
            difficulties: vec![1.0; num_classes],
            correct_counts: vec![0; num_classes],
            totals: vec![0; num_classes],
            epoch: 0,
        }
    }

    pub fn from_counts(correct: Vec<usize>, totals: Vec<usize>, epoch: usize) -> Result<Self> {
        if correct.len() != totals.len() {
            return Err(Error::Consistency("correct/total length mismatch".into()));
        }
        let mut accuracies = Vec::with_capacity(totals.len());
        for (c, (&m, &total)) in correct.iter().zip(&totals).enumerate() {
            if total == 0 {
                return Err(Error::Config(format!(
                    "class {c} has no samples in the difficulty set"
                )));
            }
            if m > total {
                return Err(Error::Consistency(format!("class {c}: {m} correct of {total}")));
            }
            accuracies.push(m as f64 / total as f64);
        }
        let difficulties = accuracies.iter().map(|a| 1.0 - a).collect();
        Ok(Self { accuracies, difficulties, correct_counts: correct, totals, epoch })
    }

    pub fn num_classes(&self) -> usize {
        self.accuracies.len()
    }

    pub fn bias(&self, epsilon: f64) -> f64 {
        bias(&self.accuracies, epsilon)
    }
}

/// Tallies per-class hits of `predictions` against `truth` labels over
/// `num_classes` classes.
pub fn class_accuracy(
    predictions: &[usize],
    truth: &[usize],
    num_classes: usize,
    epoch: usize,
) -> Result<ClassState> {
    if predictions.len() != truth.len() {
        return Err(Error::Consistency(format!(
            "{} predictions for {} samples",
            predictions.len(),
            truth.len()
        )));
    }
    let mut correct = vec![0usize; num_classes];
    let mut totals = vec![0usize; num_classes];
    for (&p, &t) in predictions.iter().zip(truth) {
        if t >= num_classes {
            return Err(Error::Consistency(format!("label {t} out of range")));
        }
        totals[t] += 1;
        if p == t {
            correct[t] += 1;
        }
    }
    ClassState::from_counts(correct, totals, epoch)
}

/// `max(max_c A_c / (min_c A_c + eps) - 1, 0)`, bounded by `1/eps - 1`.
pub fn bias(accuracies: &[f64], epsilon: f64) -> f64 {
    let max = accuracies.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = accuracies.iter().copied().fold(f64::INFINITY, f64::min);
    if accuracies.is_empty() {
        return 0.0;
    }
    (max / (min + epsilon) - 1.0).max(0.0)
}

/// `w_c = d_c^tau`, with `0^0 = 1`.
pub fn class_weights(difficulties: &[f64], tau: f64) -> Vec<f64> {
    difficulties.iter().map(|d| d.powf(tau)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TauKind {
    Fixed(f64),
    Linear,
    Polynomial(u32),
    Logarithmic,
    Sigmoidal,
}

/// Policy mapping the performance bias to the focusing exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TauSchedule {
    pub kind: TauKind,
    /// Upper bound of tau for the dynamic variants.
    pub tau_max: f64,
    pub epsilon: f64,
    /// Epochs between difficulty snapshots.
    pub interval: usize,
}

impl Default for TauSchedule {
    fn default() -> Self {
        Self::new(TauKind::Sigmoidal)
    }
}

impl TauSchedule {
    pub fn new(kind: TauKind) -> Self {
        Self { kind, tau_max: DEFAULT_TAU_MAX, epsilon: DEFAULT_EPSILON, interval: 1 }
    }

    pub fn fixed(tau: f64) -> Self {
        Self::new(TauKind::Fixed(tau))
    }

    /// Largest attainable bias, `1/eps - 1`.
    pub fn bias_max(&self) -> f64 {
        1.0 / self.epsilon - 1.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Config(format!("epsilon must lie in (0, 1), got {}", self.epsilon)));
        }
        if !(self.tau_max >= 0.0) || !self.tau_max.is_finite() {
            return Err(Error::Config(format!("tau upper bound must be >= 0, got {}", self.tau_max)));
        }
        if self.interval == 0 {
            return Err(Error::Config("snapshot interval must be >= 1 epoch".into()));
        }
        match self.kind {
            TauKind::Fixed(t) if !(t >= 0.0) || !t.is_finite() => {
                Err(Error::Config(format!("fixed tau must be >= 0, got {t}")))
            }
            TauKind::Polynomial(p) if p < 2 => {
                Err(Error::Config(format!("polynomial degree must be >= 2, got {p}")))
            }
            _ => Ok(()),
        }
    }

    pub fn is_dynamic(&self) -> bool {
        !matches!(self.kind, TauKind::Fixed(_))
    }

    /// Tau for a bias value in `[0, bias_max]`.
    pub fn tau(&self, bias: f64) -> Result<f64> {
        let b_max = self.bias_max();
        if !(0.0..=b_max).contains(&bias) {
            return Err(Error::Domain(format!("bias {bias} outside [0, {b_max}]")));
        }
        let t_max = self.tau_max;
        Ok(match self.kind {
            TauKind::Fixed(t) => t,
            TauKind::Linear => bias / b_max * t_max,
            TauKind::Polynomial(p) => (bias / b_max).powi(p as i32) * t_max,
            // printed with a leading minus; the positive, increasing curve is intended
            TauKind::Logarithmic => t_max * (bias + 1.0).ln() / (b_max + 1.0).ln(),
            TauKind::Sigmoidal => t_max * (2.0 / (1.0 + (-bias).exp()) - 1.0),
        })
    }
}

impl fmt::Display for TauKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TauKind::Fixed(t) => write!(f, "fixed:{t}"),
            TauKind::Linear => f.write_str("linear"),
            TauKind::Polynomial(2) => f.write_str("poly"),
            TauKind::Polynomial(p) => write!(f, "poly:{p}"),
            TauKind::Logarithmic => f.write_str("log"),
            TauKind::Sigmoidal => f.write_str("sigmoid"),
        }
    }
}

impl FromStr for TauKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || {
            Error::Config(format!(
                "unknown tau schedule {s:?}; expected fixed:<t>, linear, poly[:p], log or sigmoid"
            ))
        };
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (s, None),
        };
        match (name, arg) {
            ("fixed", Some(a)) => a.parse().map(TauKind::Fixed).map_err(|_| bad()),
            ("linear", None) => Ok(TauKind::Linear),
            ("poly" | "polynomial", None) => Ok(TauKind::Polynomial(2)),
            ("poly" | "polynomial", Some(a)) => a.parse().map(TauKind::Polynomial).map_err(|_| bad()),
            ("log" | "logarithmic", None) => Ok(TauKind::Logarithmic),
            ("sigmoid" | "sigmoidal", None) => Ok(TauKind::Sigmoidal),
            // a bare number is a fixed tau
            _ => s.parse().map(TauKind::Fixed).map_err(|_| bad()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn state(acc: &[f64]) -> ClassState {
        ClassState {
            accuracies: acc.to_vec(),
            difficulties: acc.iter().map(|a| 1.0 - a).collect(),
            correct_counts: vec![0; acc.len()],
            totals: vec![1; acc.len()],
            epoch: 1,
        }
    }

    #[test]
    fn accuracy_from_predictions() {
        let truth = [0, 0, 0, 0, 1, 1];
        let s = class_accuracy(&[0, 0, 0, 1, 1, 1], &truth, 2, 3).unwrap();
        assert_eq!(s.accuracies, vec![0.75, 1.0]);
        assert_eq!(s.difficulties, vec![0.25, 0.0]);
        assert_eq!(s.correct_counts, vec![3, 2]);
        assert_eq!(s.totals, vec![4, 2]);

        let all_right = class_accuracy(&truth, &truth, 2, 0).unwrap();
        assert!(all_right.difficulties.iter().all(|&d| d == 0.0));
        let all_wrong = class_accuracy(&[1, 1, 1, 1, 0, 0], &truth, 2, 0).unwrap();
        assert!(all_wrong.difficulties.iter().all(|&d| d == 1.0));
    }

    #[test]
    fn accuracy_missing_class_is_config_error() {
        let r = class_accuracy(&[0, 0], &[0, 0], 2, 0);
        assert!(matches!(r, Err(Error::Config(_))));
        assert!(matches!(class_accuracy(&[0], &[0, 1], 2, 0), Err(Error::Consistency(_))));
    }

    #[test]
    fn bias_examples() {
        assert_eq!(bias(&[0.7, 0.7, 0.7], 0.01), 0.0);
        assert_eq!(bias(&[1.0, 0.0], 0.01), 99.0);
        assert!((bias(&[0.9, 0.4], 0.01) - (0.9 / 0.41 - 1.0)).abs() < 1e-15);
        assert!((bias(&[0.9, 0.4], 0.01) - 1.195_121_951_219_512).abs() < 1e-12);
        assert_eq!(ClassState::initial(4).bias(0.01), 0.0);
    }

    #[test]
    fn tau_endpoints() {
        let lin = TauSchedule::new(TauKind::Linear);
        assert_eq!(lin.bias_max(), 99.0);
        assert_eq!(lin.tau(0.0).unwrap(), 0.0);
        assert_eq!(lin.tau(99.0).unwrap(), 5.0);
        let sig = TauSchedule::new(TauKind::Sigmoidal);
        assert_eq!(sig.tau(0.0).unwrap(), 0.0);
        assert!((sig.tau(99.0).unwrap() - 5.0).abs() < 1e-12);
        let poly = TauSchedule::new(TauKind::Polynomial(2));
        assert!((poly.tau(49.5).unwrap() - 1.25).abs() < 1e-15);
        let log = TauSchedule::new(TauKind::Logarithmic);
        assert_eq!(log.tau(0.0).unwrap(), 0.0);
        assert_eq!(log.tau(99.0).unwrap(), 5.0);
        assert_eq!(TauSchedule::fixed(1.5).tau(42.0).unwrap(), 1.5);
    }

    #[test]
    fn tau_domain() {
        let lin = TauSchedule::new(TauKind::Linear);
        assert!(matches!(lin.tau(-0.1), Err(Error::Domain(_))));
        assert!(matches!(lin.tau(99.5), Err(Error::Domain(_))));
    }

    #[test]
    fn small_bias_ordering() {
        let b = 0.01 * 99.0;
        let poly = TauSchedule::new(TauKind::Polynomial(2)).tau(b).unwrap();
        let lin = TauSchedule::new(TauKind::Linear).tau(b).unwrap();
        let log = TauSchedule::new(TauKind::Logarithmic).tau(b).unwrap();
        assert!(poly < lin && lin < log, "{poly} {lin} {log}");
    }

    #[test]
    fn sigmoid_saturates_below_max() {
        let s = TauSchedule { tau_max: 5.0, epsilon: 0.5, ..TauSchedule::default() };
        let top = s.tau(s.bias_max()).unwrap();
        assert!(top < 5.0);
        assert!((top - 5.0 * (2.0 / (1.0 + (-1.0f64).exp()) - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn weights_examples() {
        assert_eq!(class_weights(&[0.0, 0.3, 1.0], 0.0), vec![1.0, 1.0, 1.0]);
        assert_eq!(class_weights(&[1.0, 1.0], 3.7), vec![1.0, 1.0]);
        let w = class_weights(&[0.25, 0.81], 2.0);
        assert!((w[0] - 0.0625).abs() < 1e-15 && (w[1] - 0.6561).abs() < 1e-15);
        assert_eq!(class_weights(&[0.0], 2.0), vec![0.0]);
    }

    #[test]
    fn parse_round_trip() {
        for s in ["fixed:1.5", "linear", "poly", "poly:3", "log", "sigmoid"] {
            let k: TauKind = s.parse().unwrap();
            assert_eq!(k.to_string(), s);
        }
        assert_eq!("2".parse::<TauKind>().unwrap(), TauKind::Fixed(2.0));
        assert!("cubic".parse::<TauKind>().is_err());
        assert!(TauSchedule::new(TauKind::Polynomial(1)).validate().is_err());
    }

    proptest! {
        #[test]
        fn schedules_monotone_and_bounded(k in 0usize..4, p in 2u32..6) {
            let kind = [TauKind::Linear, TauKind::Polynomial(p), TauKind::Logarithmic, TauKind::Sigmoidal][k];
            let s = TauSchedule::new(kind);
            let mut prev = -1.0;
            for i in 0..=1000 {
                let b = s.bias_max() * i as f64 / 1000.0;
                let t = s.tau(b).unwrap();
                prop_assert!(t >= prev);
                prop_assert!((0.0..=s.tau_max).contains(&t));
                prev = t;
            }
        }

        #[test]
        fn bias_permutation_and_interior_invariance(
            acc in proptest::collection::vec(0.0f64..=1.0, 2..12),
            frac in 0.01f64..0.99,
            shift in 0usize..12,
        ) {
            let b = bias(&acc, 0.01);
            let mut rotated = acc.clone();
            let n = rotated.len();
            rotated.rotate_left(shift % n);
            prop_assert_eq!(bias(&rotated, 0.01), b);
            let lo = acc.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            if hi > lo {
                let mut extended = acc.clone();
                extended.push(lo + frac * (hi - lo));
                prop_assert_eq!(bias(&extended, 0.01), b);
            }
            prop_assert!((0.0..=99.0).contains(&b));
        }

        #[test]
        fn weights_monotone_in_difficulty(d1 in 0.0f64..=1.0, d2 in 0.0f64..=1.0, tau in 0.01f64..6.0) {
            let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
            let w = class_weights(&[lo, hi], tau);
            prop_assert!(w[0] <= w[1]);
        }
    }

    #[test]
    fn difficulty_is_one_minus_accuracy() {
        let s = state(&[0.1, 0.5, 0.95]);
        for (a, d) in s.accuracies.iter().zip(&s.difficulties) {
            assert_eq!(*d, 1.0 - a);
        }
    }
}
