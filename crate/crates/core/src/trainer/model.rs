use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::softmax_in_place;
use crate::matrix::Matrix;

/// Learnable scales are kept at or above this value.
pub const MIN_SCALE: f64 = 1e-6;

/// Softmax regression (`hidden_dim == 0`) or a one-hidden-layer ReLU MLP.
///
/// With `scales` present, logit `c` is multiplied by `scales[c]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    /// `hidden_dim x input_dim`; empty for softmax regression.
    pub w1: Matrix,
    pub b1: Vec<f64>,
    /// `num_classes x (hidden_dim or input_dim)`.
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub scales: Option<Vec<f64>>,
}

/// Which parameters receive gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Full,
    /// Hidden layer frozen (classifier retraining).
    ClassifierOnly,
    /// Everything frozen except the per-class logit scales.
    ScalesOnly,
}

/// Activations kept from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Post-ReLU hidden activations (`None` without a hidden layer).
    pub hidden: Option<Matrix>,
    /// Classifier outputs before the per-class scales.
    pub raw_logits: Matrix,
    pub logits: Matrix,
    pub probs: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w1: Matrix,
    pub b1: Vec<f64>,
    pub w2: Matrix,
    pub b2: Vec<f64>,
    pub scales: Option<Vec<f64>>,
}

fn he_matrix<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let std = (2.0 / cols as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal) * std).collect();
    Matrix::from_vec(rows, cols, data)
}

impl MlpModel {
    /// He-initialised weights, zero biases.
    pub fn init<R: Rng + ?Sized>(
        input_dim: usize,
        hidden_dim: usize,
        num_classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || num_classes < 2 {
            return Err(Error::Config(format!(
                "model needs input_dim >= 1 and >= 2 classes (got {input_dim}, {num_classes})"
            )));
        }
        let (w1, b1) = if hidden_dim > 0 {
            (he_matrix(hidden_dim, input_dim, rng), vec![0.0; hidden_dim])
        } else {
            (Matrix::zeros(0, input_dim), Vec::new())
        };
        let feat = if hidden_dim > 0 { hidden_dim } else { input_dim };
        let w2 = he_matrix(num_classes, feat, rng);
        Ok(Self {
            input_dim,
            hidden_dim,
            num_classes,
            w1,
            b1,
            w2,
            b2: vec![0.0; num_classes],
            scales: None,
        })
    }

    /// All-zero parameters; predicts the uniform distribution.
    pub fn zeros(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        let feat = if hidden_dim > 0 { hidden_dim } else { input_dim };
        Self {
            input_dim,
            hidden_dim,
            num_classes,
            w1: Matrix::zeros(hidden_dim, input_dim),
            b1: vec![0.0; hidden_dim],
            w2: Matrix::zeros(num_classes, feat),
            b2: vec![0.0; num_classes],
            scales: None,
        }
    }

    /// Re-draws the classifier layer, keeping the hidden layer.
    pub fn reinit_classifier<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        self.w2 = he_matrix(self.w2.rows(), self.w2.cols(), rng);
        self.b2 = vec![0.0; self.num_classes];
    }

    fn classifier_input_dim(&self) -> usize {
        self.w2.cols()
    }

    pub fn forward(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.input_dim {
            return Err(Error::Config(format!(
                "input width {} does not match model input {}",
                x.cols(),
                self.input_dim
            )));
        }
        let n = x.rows();
        let hidden = if self.hidden_dim > 0 {
            let mut h = Matrix::zeros(n, self.hidden_dim);
            for r in 0..n {
                let xr = x.row(r);
                let hr = h.row_mut(r);
                for (j, out) in hr.iter_mut().enumerate() {
                    let z = self.b1[j] + dot(self.w1.row(j), xr);
                    *out = z.max(0.0);
                }
            }
            Some(h)
        } else {
            None
        };
        let feats = hidden.as_ref().unwrap_or(x);
        let mut raw = Matrix::zeros(n, self.num_classes);
        for r in 0..n {
            let fr = feats.row(r);
            for (c, out) in raw.row_mut(r).iter_mut().enumerate() {
                *out = self.b2[c] + dot(self.w2.row(c), fr);
            }
        }
        let logits = match &self.scales {
            Some(s) => {
                let mut z = raw.clone();
                for r in 0..n {
                    for (v, sc) in z.row_mut(r).iter_mut().zip(s) {
                        *v *= sc;
                    }
                }
                z
            }
            None => raw.clone(),
        };
        let mut probs = logits.clone();
        for r in 0..n {
            softmax_in_place(probs.row_mut(r));
        }
        Ok(ForwardCache { hidden, raw_logits: raw, logits, probs })
    }

    /// Class probabilities only.
    pub fn predict_proba(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.probs)
    }

    /// Backpropagates `grad_logits` (`d loss / d logits`) through the model.
    /// Gradients of frozen tensors under `mode` are left at zero.
    pub fn backward(
        &self,
        x: &Matrix,
        cache: &ForwardCache,
        grad_logits: &Matrix,
        mode: TrainMode,
    ) -> Gradients {
        let n = x.rows();
        let k = self.classifier_input_dim();
        let mut g = Gradients {
            w1: Matrix::zeros(self.w1.rows(), self.w1.cols()),
            b1: vec![0.0; self.b1.len()],
            w2: Matrix::zeros(self.num_classes, k),
            b2: vec![0.0; self.num_classes],
            scales: self.scales.as_ref().map(|s| vec![0.0; s.len()]),
        };

        // through the per-class scales
        let grad_raw = match &self.scales {
            Some(s) => {
                let gs = g.scales.as_mut().expect("scales grad");
                let mut gr = grad_logits.clone();
                for r in 0..n {
                    let raw = cache.raw_logits.row(r);
                    for c in 0..self.num_classes {
                        gs[c] += grad_logits.get(r, c) * raw[c];
                        gr.set(r, c, grad_logits.get(r, c) * s[c]);
                    }
                }
                gr
            }
            None => grad_logits.clone(),
        };
        if mode == TrainMode::ScalesOnly {
            return g;
        }

        let feats = cache.hidden.as_ref().unwrap_or(x);
        for r in 0..n {
            let gr = grad_raw.row(r);
            let fr = feats.row(r);
            for c in 0..self.num_classes {
                let gc = gr[c];
                g.b2[c] += gc;
                if gc != 0.0 {
                    axpy(gc, fr, g.w2.row_mut(c));
                }
            }
        }
        if mode == TrainMode::ClassifierOnly || self.hidden_dim == 0 {
            return g;
        }

        let hidden = cache.hidden.as_ref().expect("hidden activations");
        let mut dpre = vec![0.0; self.hidden_dim];
        for r in 0..n {
            let gr = grad_raw.row(r);
            let hr = hidden.row(r);
            for (j, d) in dpre.iter_mut().enumerate() {
                *d = if hr[j] > 0.0 {
                    (0..self.num_classes).map(|c| gr[c] * self.w2.get(c, j)).sum()
                } else {
                    0.0
                };
            }
            let xr = x.row(r);
            for (j, &d) in dpre.iter().enumerate() {
                if d != 0.0 {
                    g.b1[j] += d;
                    axpy(d, xr, g.w1.row_mut(j));
                }
            }
        }
        g
    }

    /// Mutable parameter tensors in a fixed order: w1, b1, w2, b2, scales.
    pub(crate) fn tensors_mut(&mut self) -> [Option<&mut [f64]>; 5] {
        [
            Some(self.w1.as_mut_slice()),
            Some(self.b1.as_mut_slice()),
            Some(self.w2.as_mut_slice()),
            Some(self.b2.as_mut_slice()),
            self.scales.as_deref_mut(),
        ]
    }

    /// Parameter tensors in the same order as [`MlpModel::tensors_mut`].
    pub fn tensors(&self) -> [(&'static str, Option<&[f64]>); 5] {
        [
            ("w1", Some(self.w1.as_slice())),
            ("b1", Some(self.b1.as_slice())),
            ("w2", Some(self.w2.as_slice())),
            ("b2", Some(self.b2.as_slice())),
            ("scales", self.scales.as_deref()),
        ]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.is_none_or(|t| t.iter().all(|v| v.is_finite())))
    }
}

impl Gradients {
    pub(crate) fn tensors(&self) -> [Option<&[f64]>; 5] {
        [
            Some(self.w1.as_slice()),
            Some(self.b1.as_slice()),
            Some(self.w2.as_slice()),
            Some(self.b2.as_slice()),
            self.scales.as_deref(),
        ]
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::rng_from_seed;
    use crate::losses::{loss_backward, loss_forward, BatchProbs, LossKind, LossSpec};

    fn random_input(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = rng_from_seed(seed);
        Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-2.0..2.0)).collect())
    }

    #[test]
    fn zero_model_is_uniform() {
        for h in [0, 5] {
            let m = MlpModel::zeros(3, h, 4);
            let p = m.predict_proba(&random_input(6, 3, 1)).unwrap();
            assert!(p.as_slice().iter().all(|&x| x == 0.25));
        }
    }

    #[test]
    fn rows_sum_to_one() {
        let mut rng = rng_from_seed(2);
        let m = MlpModel::init(5, 7, 6, &mut rng).unwrap();
        let p = m.predict_proba(&random_input(20, 5, 3)).unwrap();
        for r in 0..p.rows() {
            assert!((p.row(r).iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn softmax_regression_is_affine() {
        let mut rng = rng_from_seed(4);
        let m = MlpModel::init(3, 0, 2, &mut rng).unwrap();
        let x = random_input(1, 3, 5);
        let c = m.forward(&x).unwrap();
        assert!(c.hidden.is_none());
        let z0 = m.b2[0] + (0..3).map(|j| m.w2.get(0, j) * x.get(0, j)).sum::<f64>();
        assert!((c.logits.get(0, 0) - z0).abs() < 1e-15);
    }

    #[test]
    fn dimension_mismatch() {
        let m = MlpModel::zeros(3, 0, 2);
        assert!(matches!(m.forward(&Matrix::zeros(1, 4)), Err(Error::Config(_))));
    }

    #[test]
    fn equal_scales_keep_argmax() {
        let mut rng = rng_from_seed(8);
        let mut m = MlpModel::init(4, 6, 5, &mut rng).unwrap();
        let x = random_input(50, 4, 9);
        let argmax = |p: &Matrix| -> Vec<usize> {
            (0..p.rows())
                .map(|r| {
                    let row = p.row(r);
                    (0..row.len()).fold(0, |b, c| if row[c] > row[b] { c } else { b })
                })
                .collect()
        };
        let before = argmax(&m.predict_proba(&x).unwrap());
        m.scales = Some(vec![2.7; 5]);
        assert_eq!(before, argmax(&m.predict_proba(&x).unwrap()));
        m.scales = None;
        let unscaled = m.forward(&x).unwrap().logits;
        m.scales = Some(vec![1.0; 5]);
        assert_eq!(unscaled, m.forward(&x).unwrap().logits);
    }

    fn flat_params(m: &MlpModel) -> Vec<f64> {
        m.tensors().iter().flat_map(|(_, t)| t.unwrap_or(&[]).to_vec()).collect()
    }

    fn set_flat(m: &mut MlpModel, values: &[f64]) {
        let mut i = 0;
        for t in m.tensors_mut().into_iter().flatten() {
            for v in t.iter_mut() {
                *v = values[i];
                i += 1;
            }
        }
    }

    #[test]
    fn end_to_end_gradient_matches_finite_differences() {
        let h = 1e-5;
        for trial in 0..50u64 {
            let mut rng = rng_from_seed(100 + trial);
            let mut m = MlpModel::init(4, 3, 3, &mut rng).unwrap();
            if trial % 2 == 1 {
                m.scales = Some((0..3).map(|_| rng.random_range(0.5..1.5)).collect());
            }
            let x = random_input(5, 4, 200 + trial);
            let labels: Vec<usize> = (0..5).map(|_| rng.random_range(0..3)).collect();
            let spec = LossSpec::new(LossKind::ALL[trial as usize % 5])
                .with_gamma(1.5)
                .with_weights(vec![0.4, 1.0, 1.7]);
            let loss_of = |m: &MlpModel| {
                let probs = m.predict_proba(&x).unwrap();
                loss_forward(&spec, &BatchProbs::new(probs, labels.clone()).unwrap()).unwrap().1
            };
            let cache = m.forward(&x).unwrap();
            let batch = BatchProbs::new(cache.probs.clone(), labels.clone()).unwrap();
            let gl = loss_backward(&spec, &batch).unwrap();
            let g = m.backward(&x, &cache, &gl, TrainMode::Full);
            let analytic: Vec<f64> = g.tensors().iter().flat_map(|t| t.unwrap_or(&[]).to_vec()).collect();

            let base = flat_params(&m);
            let mut numeric = vec![0.0; base.len()];
            for i in 0..base.len() {
                let mut p = base.clone();
                p[i] += h;
                set_flat(&mut m, &p);
                let up = loss_of(&m);
                p[i] -= 2.0 * h;
                set_flat(&mut m, &p);
                let down = loss_of(&m);
                numeric[i] = (up - down) / (2.0 * h);
            }
            set_flat(&mut m, &base);
            let diff: f64 =
                analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = numeric.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!(diff <= 1e-3 * norm.max(1e-8), "trial {trial}: {diff} / {norm}");
        }
    }

    #[test]
    fn frozen_modes_zero_gradients() {
        let mut rng = rng_from_seed(5);
        let mut m = MlpModel::init(4, 3, 3, &mut rng).unwrap();
        m.scales = Some(vec![1.0; 3]);
        let x = random_input(4, 4, 6);
        let cache = m.forward(&x).unwrap();
        let gl = loss_backward(
            &LossSpec::new(LossKind::Ce),
            &BatchProbs::new(cache.probs.clone(), vec![0, 1, 2, 0]).unwrap(),
        )
        .unwrap();
        let g = m.backward(&x, &cache, &gl, TrainMode::ClassifierOnly);
        assert!(g.w1.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.w2.as_slice().iter().any(|&v| v != 0.0));
        let g = m.backward(&x, &cache, &gl, TrainMode::ScalesOnly);
        assert!(g.w2.as_slice().iter().all(|&v| v == 0.0));
        assert!(g.scales.unwrap().iter().any(|&v| v != 0.0));
    }
}
