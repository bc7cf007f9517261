//! Differentially private linear SVM over random Fourier features.
//!
//! An RBF kernel `exp(-gamma ||x - y||^2)` is approximated with `dhat` random
//! features; the primal objective `||w||^2 / 2 + (C/n) sum hinge` is solved
//! by subgradient descent, then the weight vector is perturbed with Laplace
//! noise of scale `4 C sqrt(dhat) / (eps n)` (output perturbation). The
//! stored model holds only the projection and the noised weights.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::matrix::Matrix;
use crate::seed;

const EPOCHS: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpSvcInternals {
    /// `dhat x n_features` frequencies drawn from N(0, 2 gamma I).
    pub projection: Matrix,
    pub offsets: Vec<f64>,
    pub weights: Vec<f64>,
    pub noise_scale: f64,
}

pub(crate) struct DpSvcConfig {
    pub dhat: usize,
    pub c: f64,
    pub eps: f64,
    pub gamma: f64,
    pub add_noise: bool,
}

impl DpSvcInternals {
    pub(crate) fn fit(x: &Matrix, y: &[usize], cfg: &DpSvcConfig, seed_value: u64) -> Self {
        let d = x.cols();
        let mut feat_rng = seed::child_rng(seed_value, 0);
        let sd = (2.0 * cfg.gamma).sqrt();
        let mut projection = Matrix::zeros(cfg.dhat, d);
        for j in 0..cfg.dhat {
            for v in projection.row_mut(j) {
                let z: f64 = feat_rng.sample(StandardNormal);
                *v = z * sd;
            }
        }
        let offsets: Vec<f64> = (0..cfg.dhat)
            .map(|_| feat_rng.gen_range(0.0..std::f64::consts::TAU))
            .collect();
        let mut model = Self {
            projection,
            offsets,
            weights: vec![0.0; cfg.dhat],
            noise_scale: 0.0,
        };

        let n = x.rows();
        let phi: Vec<Vec<f64>> = x.iter_rows().map(|r| model.features(r)).collect();
        let signs: Vec<f64> = y.iter().map(|&c| if c == 1 { 1.0 } else { -1.0 }).collect();
        let mut w = vec![0.0; cfg.dhat];
        let coef = cfg.c / n as f64;
        for t in 1..=EPOCHS {
            let mut g = w.clone();
            for (p, &s) in phi.iter().zip(&signs) {
                let margin: f64 = s * p.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                if margin < 1.0 {
                    for (gj, pj) in g.iter_mut().zip(p) {
                        *gj -= coef * s * pj;
                    }
                }
            }
            let eta = 1.0 / t as f64;
            for (wj, gj) in w.iter_mut().zip(&g) {
                *wj -= eta * gj;
            }
        }

        if cfg.add_noise {
            let scale = 4.0 * cfg.c * (cfg.dhat as f64).sqrt() / (cfg.eps * n as f64);
            let mut noise_rng = seed::child_rng(seed_value, 1);
            for wj in w.iter_mut() {
                *wj += laplace(&mut noise_rng, scale);
            }
            model.noise_scale = scale;
        }
        model.weights = w;
        model
    }

    pub(crate) fn features(&self, x: &[f64]) -> Vec<f64> {
        let norm = (2.0 / self.offsets.len() as f64).sqrt();
        self.projection
            .iter_rows()
            .zip(&self.offsets)
            .map(|(omega, b)| {
                let z: f64 = omega.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() + b;
                norm * z.cos()
            })
            .collect()
    }

    pub fn decision_function(&self, x: &[f64]) -> f64 {
        self.features(x)
            .iter()
            .zip(&self.weights)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub(crate) fn proba_into(&self, x: &[f64], out: &mut [f64]) {
        let p1 = 1.0 / (1.0 + (-self.decision_function(x)).exp());
        out[0] = 1.0 - p1;
        out[1] = p1;
    }
}

fn laplace<R: Rng>(rng: &mut R, scale: f64) -> f64 {
    let mut u: f64 = rng.gen_range(-0.5..0.5);
    while u.abs() >= 0.5 {
        u = rng.gen_range(-0.5..0.5);
    }
    -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln()
}
