//! Seeded synthetic tabular datasets for desk-scale experiments.
//!
//! Every generator shares one layout: `n_numeric` float64 columns `x0..`,
//! a three-level onehot `band`, and an int64 `visits` count, with a binary
//! `outcome` target.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

use super::{DataDictionary, Dataset, Encoding, FeatureSpec, TargetSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Labels are a deterministic function of the features.
    Separable,
    /// Separable labels with 10% of them flipped.
    Noisy,
    /// 30% flipped labels: deep models must memorise to fit them.
    Memorization,
    /// A different feature distribution and labelling rule, same layout.
    Unrelated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub regime: Regime,
    pub n_rows: usize,
    #[serde(default = "default_numeric")]
    pub n_numeric: usize,
    /// Overrides the regime's flip rate when set.
    #[serde(default)]
    pub label_noise: Option<f64>,
    pub seed: u64,
}

fn default_numeric() -> usize {
    4
}

impl SyntheticSpec {
    pub fn new(regime: Regime, n_rows: usize, seed: u64) -> Self {
        Self {
            regime,
            n_rows,
            n_numeric: default_numeric(),
            label_noise: None,
            seed,
        }
    }

    fn noise(&self) -> f64 {
        self.label_noise.unwrap_or(match self.regime {
            Regime::Separable | Regime::Unrelated => 0.0,
            Regime::Noisy => 0.1,
            Regime::Memorization => 0.3,
        })
    }
}

pub fn synthetic_dictionary(n_numeric: usize) -> DataDictionary {
    let mut features: Vec<FeatureSpec> = (0..n_numeric)
        .map(|j| FeatureSpec {
            name: format!("x{j}"),
            indices: vec![j],
            encoding: Encoding::Float64,
        })
        .collect();
    features.push(FeatureSpec {
        name: "band".into(),
        indices: vec![n_numeric, n_numeric + 1, n_numeric + 2],
        encoding: Encoding::Onehot,
    });
    features.push(FeatureSpec {
        name: "visits".into(),
        indices: vec![n_numeric + 3],
        encoding: Encoding::Int64,
    });
    DataDictionary {
        features,
        target: TargetSpec {
            name: "outcome".into(),
            classes: vec!["0".into(), "1".into()],
        },
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset> {
    if spec.n_rows < 2 || spec.n_numeric == 0 {
        return Err(Error::Argument(
            "synthetic data needs at least 2 rows and 1 numeric column".into(),
        ));
    }
    let noise = spec.noise();
    if !(0.0..=0.5).contains(&noise) {
        return Err(Error::Argument(format!("label noise {noise} not in [0, 0.5]")));
    }
    let k = spec.n_numeric;
    let width = k + 4;
    let mut rng = seed::rng(spec.seed);
    let mut m = Matrix::zeros(spec.n_rows, width);
    let mut labels = Vec::with_capacity(spec.n_rows);
    for i in 0..spec.n_rows {
        let row = m.row_mut(i);
        let unrelated = spec.regime == Regime::Unrelated;
        for v in row.iter_mut().take(k) {
            let x: f64 = if unrelated {
                rng.gen_range(0.0..3.0)
            } else {
                rng.gen_range(-1.0..1.0)
            };
            *v = (x * 1000.0).round() / 1000.0;
        }
        let band = rng.gen_range(0..3usize);
        row[k + band] = 1.0;
        let visits = rng.gen_range(0..10u32);
        row[k + 3] = f64::from(visits);

        let positive = if unrelated {
            (row[0] > 1.5) ^ (band == 2)
        } else {
            let mut z = 0.0;
            for (j, &x) in row.iter().take(k).enumerate() {
                let w = [1.0, -0.8, 0.6, -0.4][j % 4] / (1 + j / 4) as f64;
                z += w * x;
            }
            z += [0.0, 0.25, -0.25][band] + 0.03 * (f64::from(visits) - 4.5);
            z > 0.0
        };
        let flip = noise > 0.0 && rng.gen_bool(noise);
        labels.push(usize::from(positive ^ flip));
    }
    let tag = match spec.regime {
        Regime::Separable => "s",
        Regime::Noisy => "n",
        Regime::Memorization => "m",
        Regime::Unrelated => "u",
    };
    let groups = (0..spec.n_rows).map(|i| format!("{tag}{i}")).collect();
    Dataset::new(m, labels, groups, synthetic_dictionary(k))
}
