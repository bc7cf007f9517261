//! Multinomial logistic regression trained by full-batch gradient descent.

use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticInternals {
    /// `n_classes x n_features`, row-major, in standardized feature space.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub feature_mean: Vec<f64>,
    pub feature_scale: Vec<f64>,
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Mean cross-entropy plus `l2/2 * ||W||^2`, and its gradient with respect to
/// the weights and the bias.
pub fn loss_and_gradient(
    weights: &[f64],
    bias: &[f64],
    x: &Matrix,
    y: &[usize],
    l2: f64,
) -> (f64, Vec<f64>, Vec<f64>) {
    let k = bias.len();
    let d = x.cols();
    let n = x.rows() as f64;
    let mut gw = vec![0.0; k * d];
    let mut gb = vec![0.0; k];
    let mut loss = 0.0;
    let mut z = vec![0.0; k];
    for (i, row) in x.iter_rows().enumerate() {
        for c in 0..k {
            z[c] = bias[c] + dot(&weights[c * d..(c + 1) * d], row);
        }
        softmax_in_place(&mut z);
        loss -= z[y[i]].max(1e-300).ln();
        for c in 0..k {
            let r = z[c] - if c == y[i] { 1.0 } else { 0.0 };
            gb[c] += r;
            for (g, &v) in gw[c * d..(c + 1) * d].iter_mut().zip(row) {
                *g += r * v;
            }
        }
    }
    loss /= n;
    for g in gb.iter_mut() {
        *g /= n;
    }
    for (g, &w) in gw.iter_mut().zip(weights) {
        *g = *g / n + l2 * w;
    }
    loss += 0.5 * l2 * weights.iter().map(|w| w * w).sum::<f64>();
    (loss, gw, gb)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl LogisticInternals {
    pub(crate) fn fit(
        x: &Matrix,
        y: &[usize],
        n_classes: usize,
        learning_rate: f64,
        l2: f64,
        epochs: usize,
    ) -> Self {
        let d = x.cols();
        let n = x.rows() as f64;
        let mut mean = vec![0.0; d];
        for row in x.iter_rows() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / n;
            }
        }
        let mut scale = vec![0.0; d];
        for row in x.iter_rows() {
            for j in 0..d {
                scale[j] += (row[j] - mean[j]).powi(2) / n;
            }
        }
        for s in scale.iter_mut() {
            *s = if *s > 0.0 { s.sqrt() } else { 1.0 };
        }
        let mut xs = x.clone();
        for i in 0..xs.rows() {
            for (j, v) in xs.row_mut(i).iter_mut().enumerate() {
                *v = (*v - mean[j]) / scale[j];
            }
        }
        let mut w = vec![0.0; n_classes * d];
        let mut b = vec![0.0; n_classes];
        for _ in 0..epochs {
            let (_, gw, gb) = loss_and_gradient(&w, &b, &xs, y, l2);
            for (wi, g) in w.iter_mut().zip(&gw) {
                *wi -= learning_rate * g;
            }
            for (bi, g) in b.iter_mut().zip(&gb) {
                *bi -= learning_rate * g;
            }
        }
        Self {
            weights: w,
            bias: b,
            feature_mean: mean,
            feature_scale: scale,
        }
    }

    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let d = x.len();
        for (c, o) in out.iter_mut().enumerate() {
            let w = &self.weights[c * d..(c + 1) * d];
            let mut z = self.bias[c];
            for j in 0..d {
                z += w[j] * (x[j] - self.feature_mean[j]) / self.feature_scale[j];
            }
            *o = z;
        }
        softmax_in_place(out);
    }
}
