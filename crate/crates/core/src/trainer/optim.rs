use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trainer::model::{Gradients, MlpModel, TrainMode, MIN_SCALE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// Multiply by `factor` at each milestone epoch.
    Step { milestones: Vec<usize>, factor: f64 },
    /// Half cosine from the initial rate down to zero at the last epoch.
    Cosine,
}

impl LrSchedule {
    /// Learning rate for `epoch` out of `total_epochs`.
    pub fn lr(&self, base: f64, epoch: usize, total_epochs: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Step { milestones, factor } => {
                let passed = milestones.iter().filter(|&&m| epoch >= m).count();
                base * factor.powi(passed as i32)
            }
            LrSchedule::Cosine => {
                if total_epochs == 0 {
                    return base;
                }
                let x = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
                base * (1.0 + x.cos()) / 2.0
            }
        }
    }

    pub fn validate(&self, total_epochs: usize) -> Result<()> {
        if let LrSchedule::Step { milestones, factor } = self {
            if !(*factor > 0.0) {
                return Err(Error::Config(format!("lr factor must be > 0, got {factor}")));
            }
            if milestones.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Config("milestones must be strictly increasing".into()));
            }
            if milestones.last().is_some_and(|&m| m >= total_epochs) {
                return Err(Error::Config(format!(
                    "milestones must be below the epoch count {total_epochs}"
                )));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Step { .. } => "step",
            LrSchedule::Cosine => "cosine",
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "step" => Ok(LrSchedule::Step { milestones: Vec::new(), factor: 0.1 }),
            "cosine" => Ok(LrSchedule::Cosine),
            _ => Err(Error::Config(format!(
                "unknown lr schedule {s:?}; expected constant, step or cosine"
            ))),
        }
    }
}

/// SGD with classical momentum and L2 weight decay.
///
/// `v <- momentum * v + (g + decay * w)`, `w <- w - lr * v`. The per-class
/// logit scales are not decayed and are clamped to stay positive.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: [Vec<f64>; 5],
}

impl Sgd {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self { momentum, weight_decay, velocity: Default::default() }
    }

    pub fn step(&mut self, model: &mut MlpModel, grads: &Gradients, lr: f64, mode: TrainMode) {
        let trainable = match mode {
            TrainMode::Full => [true, true, true, true, true],
            TrainMode::ClassifierOnly => [false, false, true, true, true],
            TrainMode::ScalesOnly => [false, false, false, false, true],
        };
        let grads = grads.tensors();
        for (i, param) in model.tensors_mut().into_iter().enumerate() {
            let (Some(param), Some(grad)) = (param, grads[i]) else { continue };
            if !trainable[i] {
                continue;
            }
            let decay = if i == 4 { 0.0 } else { self.weight_decay };
            let v = &mut self.velocity[i];
            if v.len() != param.len() {
                *v = vec![0.0; param.len()];
            }
            for ((w, &g), vi) in param.iter_mut().zip(grad).zip(v.iter_mut()) {
                *vi = self.momentum * *vi + (g + decay * *w);
                *w -= lr * *vi;
            }
            if i == 4 {
                for w in param.iter_mut() {
                    *w = w.max(MIN_SCALE);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_endpoints() {
        let s = LrSchedule::Cosine;
        assert_eq!(s.lr(0.2, 0, 100), 0.2);
        assert!(s.lr(0.2, 100, 100).abs() < 1e-17);
        assert!((s.lr(0.2, 50, 100) - 0.1).abs() < 1e-15);
    }

    #[test]
    fn step_schedule() {
        let s = LrSchedule::Step { milestones: vec![160, 180], factor: 0.1 };
        assert_eq!(s.lr(0.1, 159, 200), 0.1);
        assert!((s.lr(0.1, 160, 200) - 0.01).abs() < 1e-15);
        assert!((s.lr(0.1, 199, 200) - 0.001).abs() < 1e-15);
        assert!(s.validate(200).is_ok());
        assert!(s.validate(170).is_err());
        let bad = LrSchedule::Step { milestones: vec![5, 5], factor: 0.1 };
        assert!(bad.validate(10).is_err());
    }

    #[test]
    fn momentum_accumulates() {
        let mut m = MlpModel::zeros(1, 0, 2);
        let g = Gradients {
            w1: crate::Matrix::zeros(0, 1),
            b1: vec![],
            w2: crate::Matrix::from_vec(2, 1, vec![1.0, -1.0]),
            b2: vec![0.0, 0.0],
            scales: None,
        };
        let mut opt = Sgd::new(0.9, 0.0);
        opt.step(&mut m, &g, 0.1, TrainMode::Full);
        assert!((m.w2.get(0, 0) + 0.1).abs() < 1e-15);
        opt.step(&mut m, &g, 0.1, TrainMode::Full);
        // v = 0.9 * 1 + 1 = 1.9
        assert!((m.w2.get(0, 0) + 0.1 + 0.19).abs() < 1e-15);
    }
}
