//! Target classifiers with a uniform probability interface, canonical
//! serialization and internals introspection.

mod dp_svc;
mod logistic;
mod params;
mod tree;

pub use dp_svc::DpSvcInternals;
pub use logistic::{loss_and_gradient, LogisticInternals};
pub use params::{DefaultValue, ModelKind, ModelSpec, ParamMap, ParamValue};
pub use tree::{Node, Tree};

pub(crate) use params::{bool_param, int_param, positive_int, real_param};

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::seed;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestInternals {
    pub trees: Vec<Tree>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnInternals {
    pub k: usize,
    pub rows: Matrix,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Internals {
    DecisionTree(Tree),
    RandomForest(ForestInternals),
    LogisticRegression(LogisticInternals),
    Knn(KnnInternals),
    DpSvc(DpSvcInternals),
}

impl Internals {
    fn kind(&self) -> ModelKind {
        match self {
            Internals::DecisionTree(_) => ModelKind::DecisionTree,
            Internals::RandomForest(_) => ModelKind::RandomForest,
            Internals::LogisticRegression(_) => ModelKind::LogisticRegression,
            Internals::Knn(_) => ModelKind::Knn,
            Internals::DpSvc(_) => ModelKind::DpSvc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub n_train: usize,
    pub n_features: usize,
    pub data_fingerprint: String,
    pub seed: u64,
}

/// A fitted classifier in its canonical, versioned envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainedModel {
    pub format_version: u32,
    pub kind: ModelKind,
    pub params: ParamMap,
    pub n_classes: usize,
    pub internals: Internals,
    pub fit_meta: FitMeta,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbeddedRows {
    pub count: usize,
    pub indices: Vec<usize>,
}

/// Fits `spec` on `train`. Deterministic given `(spec, train)`.
pub fn fit(spec: &ModelSpec, train: &Dataset) -> Result<TrainedModel> {
    let params = spec.resolved_params()?;
    let n_classes = train.n_classes();
    let counts = train.class_counts();
    if let Some(c) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Data(format!(
            "class '{}' does not occur in the training data",
            train.dictionary().target.classes[c]
        )));
    }
    let x = train.matrix();
    let y = train.labels();
    let internals = match spec.kind {
        ModelKind::DecisionTree => {
            let cfg = tree_config(&params, None)?;
            let samples: Vec<usize> = (0..train.n_rows()).collect();
            Internals::DecisionTree(Tree::fit(x, y, n_classes, samples, &cfg, &mut seed::rng(spec.seed)))
        }
        ModelKind::RandomForest => {
            let n_estimators = positive_int(&params, "n_estimators")?;
            let bootstrap = bool_param(&params, "bootstrap")?;
            let max_features = (x.cols() as f64).sqrt().ceil() as usize;
            let cfg = tree_config(&params, Some(max_features))?;
            let n = train.n_rows();
            let trees = (0..n_estimators)
                .map(|t| {
                    let mut rng = seed::child_rng(spec.seed, t as u64);
                    let samples: Vec<usize> = if bootstrap {
                        (0..n).map(|_| rng.gen_range(0..n)).collect()
                    } else {
                        (0..n).collect()
                    };
                    Tree::fit(x, y, n_classes, samples, &cfg, &mut rng)
                })
                .collect();
            Internals::RandomForest(ForestInternals { trees })
        }
        ModelKind::LogisticRegression => {
            let lr = real_param(&params, "learning_rate")?;
            let l2 = real_param(&params, "l2")?;
            let epochs = positive_int(&params, "epochs")?;
            if lr <= 0.0 || l2 < 0.0 {
                return Err(Error::Spec("learning_rate must be > 0 and l2 >= 0".into()));
            }
            Internals::LogisticRegression(LogisticInternals::fit(x, y, n_classes, lr, l2, epochs))
        }
        ModelKind::Knn => {
            let k = positive_int(&params, "k")?;
            Internals::Knn(KnnInternals {
                k: k.min(train.n_rows()),
                rows: x.clone(),
                labels: y.to_vec(),
            })
        }
        ModelKind::DpSvc => {
            if n_classes != 2 {
                return Err(Error::Spec("dp_svc supports binary targets only".into()));
            }
            let cfg = dp_svc_config(&params, true)?;
            Internals::DpSvc(DpSvcInternals::fit(x, y, &cfg, spec.seed))
        }
    };
    Ok(TrainedModel {
        format_version: FORMAT_VERSION,
        kind: spec.kind,
        params,
        n_classes,
        internals,
        fit_meta: FitMeta {
            n_train: train.n_rows(),
            n_features: train.width(),
            data_fingerprint: train.fingerprint(),
            seed: spec.seed,
        },
    })
}

/// The same random-feature SVM as `fit` produces for `spec`, without the
/// output perturbation.
pub fn fit_dp_svc_noise_free(spec: &ModelSpec, train: &Dataset) -> Result<DpSvcInternals> {
    if spec.kind != ModelKind::DpSvc {
        return Err(Error::Kind(format!("{} is not dp_svc", spec.kind)));
    }
    let params = spec.resolved_params()?;
    let cfg = dp_svc_config(&params, false)?;
    Ok(DpSvcInternals::fit(train.matrix(), train.labels(), &cfg, spec.seed))
}

fn tree_config(params: &ParamMap, max_features: Option<usize>) -> Result<tree::TreeConfig> {
    let min_samples_leaf = positive_int(params, "min_samples_leaf")?;
    let max_depth = match int_param(params, "max_depth")? {
        None => None,
        Some(d) if d > 0 => Some(d as usize),
        Some(d) => return Err(Error::Spec(format!("max_depth must be positive, got {d}"))),
    };
    Ok(tree::TreeConfig {
        min_samples_leaf,
        max_depth,
        max_features,
    })
}

fn dp_svc_config(params: &ParamMap, add_noise: bool) -> Result<dp_svc::DpSvcConfig> {
    let dhat = positive_int(params, "dhat")?;
    let c = real_param(params, "C")?;
    let eps = real_param(params, "eps")?;
    let gamma = real_param(params, "gamma")?;
    let delta = real_param(params, "delta")?;
    if c <= 0.0 || eps <= 0.0 || gamma <= 0.0 {
        return Err(Error::Spec("C, eps and gamma must be positive".into()));
    }
    if delta != 0.0 {
        return Err(Error::Spec("the Laplace mechanism requires delta = 0".into()));
    }
    Ok(dp_svc::DpSvcConfig {
        dhat,
        c,
        eps,
        gamma,
        add_noise,
    })
}

impl TrainedModel {
    pub fn n_features(&self) -> usize {
        self.fit_meta.n_features
    }

    /// Class probabilities for one row; `out.len()` must equal `n_classes`.
    pub fn proba_row(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match &self.internals {
            Internals::DecisionTree(t) => t.accumulate_proba(x, 1.0, out),
            Internals::RandomForest(f) => {
                let w = 1.0 / f.trees.len() as f64;
                for t in &f.trees {
                    t.accumulate_proba(x, w, out);
                }
                let s: f64 = out.iter().sum();
                out.iter_mut().for_each(|v| *v /= s);
            }
            Internals::LogisticRegression(l) => l.proba_into(x, out),
            Internals::Knn(k) => knn_proba(k, x, out),
            Internals::DpSvc(s) => s.proba_into(x, out),
        }
    }

    /// Row-stochastic `rows.rows() x n_classes` matrix.
    pub fn predict_proba(&self, rows: &Matrix) -> Result<Matrix> {
        if rows.cols() != self.n_features() {
            return Err(Error::Shape(format!(
                "model expects {} columns, got {}",
                self.n_features(),
                rows.cols()
            )));
        }
        let mut out = Matrix::zeros(rows.rows(), self.n_classes);
        for i in 0..rows.rows() {
            self.proba_row(rows.row(i), out.row_mut(i));
        }
        Ok(out)
    }

    pub fn predict(&self, rows: &Matrix) -> Result<Vec<usize>> {
        let p = self.predict_proba(rows)?;
        Ok(p.iter_rows().map(argmax).collect())
    }

    /// Compact canonical JSON; byte-identical for identical models.
    pub fn to_json_bytes(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("model serializes")
    }

    /// Reads the canonical envelope; anything else is a format error.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Self> {
        let m: TrainedModel = serde_json::from_slice(bytes)
            .map_err(|e| Error::Format(format!("not a canonical model file: {e}")))?;
        if m.format_version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unsupported model format_version {}",
                m.format_version
            )));
        }
        if m.internals.kind() != m.kind {
            return Err(Error::Format(format!(
                "model kind {} does not match its internals",
                m.kind
            )));
        }
        m.validate_internals().map_err(Error::Format)?;
        Ok(m)
    }

    fn validate_internals(&self) -> std::result::Result<(), String> {
        let (d, k) = (self.n_features(), self.n_classes);
        match &self.internals {
            Internals::DecisionTree(t) => t.validate(d, k),
            Internals::RandomForest(f) => {
                if f.trees.is_empty() {
                    return Err("forest has no trees".into());
                }
                f.trees.iter().try_for_each(|t| t.validate(d, k))
            }
            Internals::LogisticRegression(l) => {
                if l.weights.len() != d * k || l.bias.len() != k {
                    return Err("logistic weights have the wrong shape".into());
                }
                Ok(())
            }
            Internals::Knn(n) => {
                if n.rows.cols() != d || n.rows.rows() != n.labels.len() || n.k == 0 {
                    return Err("knn internals have the wrong shape".into());
                }
                Ok(())
            }
            Internals::DpSvc(s) => {
                if k != 2 || s.projection.cols() != d || s.projection.rows() != s.weights.len() {
                    return Err("dp_svc internals have the wrong shape".into());
                }
                Ok(())
            }
        }
    }

    /// SHA-256 of the canonical serialization of everything learned at fit
    /// time (internals and class count); hyperparameters are excluded.
    pub fn internals_digest(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.n_classes as u64).to_le_bytes());
        h.update(serde_json::to_vec(&self.internals).expect("internals serialize"));
        hex::encode(h.finalize())
    }

    /// Training rows that appear verbatim as a stored vector anywhere in the
    /// internals.
    pub fn embedded_training_rows(&self, train: &Dataset) -> Result<EmbeddedRows> {
        if train.fingerprint() != self.fit_meta.data_fingerprint {
            return Err(Error::Provenance(
                "dataset is not the one this model was fitted on".into(),
            ));
        }
        let d = self.n_features();
        let mut stored: Vec<&[f64]> = Vec::new();
        match &self.internals {
            Internals::Knn(k) => stored.extend(k.rows.iter_rows()),
            Internals::LogisticRegression(l) => stored.extend(l.weights.chunks(d)),
            Internals::DpSvc(s) => stored.extend(s.projection.iter_rows()),
            Internals::DecisionTree(_) | Internals::RandomForest(_) => {}
        }
        let key = |r: &[f64]| r.iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
        let stored: std::collections::HashSet<Vec<u64>> = stored.into_iter().map(key).collect();
        let indices: Vec<usize> = (0..train.n_rows())
            .filter(|&i| stored.contains(&key(train.row(i))))
            .collect();
        Ok(EmbeddedRows {
            count: indices.len(),
            indices,
        })
    }

    /// Smallest number of training rows sharing a leaf (tree) or a tuple of
    /// leaves across all trees (forest).
    pub fn k_anonymity(&self, train: &Dataset) -> Result<usize> {
        if train.width() != self.n_features() {
            return Err(Error::Shape("training data width differs from the model".into()));
        }
        let mut cells: HashMap<Vec<u32>, usize> = HashMap::new();
        let trees: Vec<&Tree> = match &self.internals {
            Internals::DecisionTree(t) => vec![t],
            Internals::RandomForest(f) => f.trees.iter().collect(),
            _ => {
                return Err(Error::Kind(format!(
                    "k-anonymity is defined for trees and forests, not {}",
                    self.kind
                )))
            }
        };
        for row in train.matrix().iter_rows() {
            let key: Vec<u32> = trees.iter().map(|t| t.leaf_index(row) as u32).collect();
            *cells.entry(key).or_default() += 1;
        }
        Ok(cells.values().copied().min().unwrap_or(0))
    }

    /// Each member tree of a forest as a standalone decision-tree model.
    pub fn member_trees(&self) -> Vec<TrainedModel> {
        match &self.internals {
            Internals::RandomForest(f) => f
                .trees
                .iter()
                .map(|t| TrainedModel {
                    format_version: FORMAT_VERSION,
                    kind: ModelKind::DecisionTree,
                    params: ParamMap::new()
                        .with(
                            "min_samples_leaf",
                            self.params.get("min_samples_leaf").cloned().unwrap_or(ParamValue::Int(1)),
                        ),
                    n_classes: self.n_classes,
                    internals: Internals::DecisionTree(t.clone()),
                    fit_meta: self.fit_meta.clone(),
                })
                .collect(),
            _ => Vec::new(),
        }
    }
}

fn knn_proba(k: &KnnInternals, x: &[f64], out: &mut [f64]) {
    let mut dist: Vec<(f64, usize)> = k
        .rows
        .iter_rows()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    let kk = k.k.min(dist.len());
    dist.select_nth_unstable_by(kk - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    for &(_, i) in &dist[..kk] {
        out[k.labels[i]] += 1.0 / kk as f64;
    }
}

pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}
