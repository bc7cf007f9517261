use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::attacks::Scenario;
use crate::dataset::{DataDictionary, Dataset, Encoding, FeatureSpec, TargetSpec};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::models::{self, ModelKind, ModelSpec, ParamMap, ParamValue, TrainedModel};
use crate::seed;

use super::ArchiveRow;

/// Predicates that mark an attack result as a vulnerability. A row is
/// flagged when the prevalence test is significant in the member direction,
/// or when any other enabled predicate holds. `None` disables a predicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VulnerabilityThresholds {
    pub pdif_below: Option<f64>,
    pub fdif_above: Option<f64>,
    pub tpr_at_fpr_01_at_least: Option<f64>,
    pub auc_above_null_band: bool,
    /// Attribute risk ratio above which a cell is attribute-vulnerable.
    pub arr: f64,
    /// Correctly inferred training records needed before a ratio counts.
    pub arr_min_at_risk: usize,
}

impl Default for VulnerabilityThresholds {
    fn default() -> Self {
        Self {
            pdif_below: Some(0.05),
            fdif_above: Some(0.0),
            tpr_at_fpr_01_at_least: Some(0.2),
            auc_above_null_band: false,
            arr: 1.25,
            arr_min_at_risk: 10,
        }
    }
}

/// `None` when a metric an enabled predicate needs is missing; such rows go
/// to manual review.
pub fn flag_vulnerable(row: &ArchiveRow, th: &VulnerabilityThresholds) -> Option<bool> {
    let pdif = match th.pdif_below {
        Some(t) => Some(row.PDIF? < t),
        None => None,
    };
    let fdif = match th.fdif_above {
        Some(t) => Some(row.FDIF? > t),
        None => None,
    };
    let prevalence = match (pdif, fdif) {
        (Some(p), Some(f)) => p && f,
        (Some(x), None) | (None, Some(x)) => x,
        (None, None) => false,
    };
    let tpr = match th.tpr_at_fpr_01_at_least {
        Some(t) => row.tpr_at_fpr_01? >= t,
        None => false,
    };
    let auc = th.auc_above_null_band && row.AUC? > row.AUC_null_hi?;
    Some(prevalence || tpr || auc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellDifference {
    pub cell_index: usize,
    pub baseline: f64,
    pub other: f64,
    /// `baseline - other`.
    pub difference: f64,
}

/// Cells placed on the (baseline, other) plane, split at the risk threshold.
/// Upper-left holds cells the other scenario finds risky and the baseline
/// does not.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quadrants {
    pub upper_left: usize,
    pub upper_right: usize,
    pub lower_left: usize,
    pub lower_right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioComparison {
    pub metric: String,
    pub baseline: Scenario,
    pub other: Scenario,
    pub risk_threshold: f64,
    pub cells: Vec<CellDifference>,
    pub quadrants: Quadrants,
    /// Cells lacking either scenario or the metric.
    pub skipped: usize,
}

/// Pairs the two scenarios' values of `metric` cell by cell.
pub fn compare_scenarios(
    rows: &[ArchiveRow],
    metric: &str,
    baseline: Scenario,
    other: Scenario,
    risk_threshold: f64,
) -> ScenarioComparison {
    let mut by_cell: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for r in rows {
        let entry = by_cell.entry(r.cell_index).or_default();
        if r.scenario == baseline {
            entry.0 = r.metric(metric);
        }
        if r.scenario == other {
            entry.1 = r.metric(metric);
        }
    }
    let mut cells = Vec::new();
    let mut quadrants = Quadrants::default();
    let mut skipped = 0;
    for (cell_index, values) in by_cell {
        let (Some(b), Some(o)) = values else {
            skipped += 1;
            continue;
        };
        match (o > risk_threshold, b > risk_threshold) {
            (true, false) => quadrants.upper_left += 1,
            (true, true) => quadrants.upper_right += 1,
            (false, false) => quadrants.lower_left += 1,
            (false, true) => quadrants.lower_right += 1,
        }
        cells.push(CellDifference {
            cell_index,
            baseline: b,
            other: o,
            difference: b - o,
        });
    }
    ScenarioComparison {
        metric: metric.to_string(),
        baseline,
        other,
        risk_threshold,
        cells,
        quadrants,
        skipped,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneralizationRow {
    pub kind: ModelKind,
    pub params: String,
    pub scenario: Scenario,
    pub metric: String,
    pub min: f64,
    pub max: f64,
    pub n: usize,
    pub datasets: Vec<String>,
}

/// Spread of each metric per (kind, param point, scenario) over datasets
/// and repeats: a point that is safe on one dataset can be unsafe on
/// another.
pub fn risk_generalization(rows: &[ArchiveRow], metrics: &[&str]) -> Vec<GeneralizationRow> {
    let mut groups: BTreeMap<(ModelKind, String, Scenario, String), GeneralizationRow> = BTreeMap::new();
    for r in rows {
        for &m in metrics {
            let Some(v) = r.metric(m) else { continue };
            let g = groups
                .entry((r.kind, r.params.clone(), r.scenario, m.to_string()))
                .or_insert_with(|| GeneralizationRow {
                    kind: r.kind,
                    params: r.params.clone(),
                    scenario: r.scenario,
                    metric: m.to_string(),
                    min: v,
                    max: v,
                    n: 0,
                    datasets: Vec::new(),
                });
            g.min = g.min.min(v);
            g.max = g.max.max(v);
            g.n += 1;
            if !g.datasets.contains(&r.dataset) {
                g.datasets.push(r.dataset.clone());
            }
        }
    }
    groups.into_values().collect()
}

pub const META_MIN_ROWS: usize = 50;
/// Value of a hyperparameter column for kinds that lack that parameter.
const MISSING_PARAM: f64 = -1.0;

/// Column layout of the meta-model: a onehot model kind followed by one
/// column per numeric or boolean hyperparameter seen in the archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatures {
    pub kinds: Vec<ModelKind>,
    pub params: Vec<String>,
}

impl MetaFeatures {
    fn from_rows(rows: &[(ModelKind, ParamMap)]) -> Self {
        let kinds: BTreeSet<ModelKind> = rows.iter().map(|(k, _)| *k).collect();
        let params: BTreeSet<String> = rows
            .iter()
            .flat_map(|(_, p)| p.iter().filter(|(_, v)| numeric(v).is_some()).map(|(k, _)| k.clone()))
            .collect();
        Self {
            kinds: kinds.into_iter().collect(),
            params: params.into_iter().collect(),
        }
    }

    fn dictionary(&self) -> DataDictionary {
        // Kind indicators are plain columns so a single-kind archive still fits.
        let names = self.kinds.iter().map(|k| format!("kind={k}")).chain(self.params.iter().cloned());
        let features = names
            .enumerate()
            .map(|(j, name)| FeatureSpec {
                name,
                indices: vec![j],
                encoding: Encoding::Float64,
            })
            .collect();
        DataDictionary {
            features,
            target: TargetSpec {
                name: "vulnerable".into(),
                classes: vec!["false".into(), "true".into()],
            },
        }
    }

    pub fn width(&self) -> usize {
        self.kinds.len() + self.params.len()
    }

    pub fn encode(&self, kind: ModelKind, params: &ParamMap) -> Result<Vec<f64>> {
        let slot = self
            .kinds
            .iter()
            .position(|&k| k == kind)
            .ok_or_else(|| Error::Kind(format!("meta-model was not trained on {kind}")))?;
        let mut row = vec![0.0; self.width()];
        row[slot] = 1.0;
        for (j, name) in self.params.iter().enumerate() {
            row[self.kinds.len() + j] = params.get(name).and_then(numeric).unwrap_or(MISSING_PARAM);
        }
        Ok(row)
    }
}

fn numeric(v: &ParamValue) -> Option<f64> {
    match v {
        ParamValue::Bool(b) => Some(f64::from(u8::from(*b))),
        other => other.as_f64(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VulnerabilityPredictor {
    pub features: MetaFeatures,
    pub model: TrainedModel,
    /// Accuracy on the held-out tenth with each class weighted by its
    /// inverse frequency there.
    pub weighted_accuracy: f64,
    pub vulnerable_recall: f64,
    /// Recall of a predictor that always answers the training majority class.
    pub majority_baseline_recall: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl VulnerabilityPredictor {
    pub fn predict(&self, kind: ModelKind, params: &ParamMap) -> Result<bool> {
        let row = self.features.encode(kind, params)?;
        Ok(self.model.predict(&Matrix::from_rows(&[row])?)?[0] == 1)
    }
}

pub fn meta_model_spec(seed_value: u64) -> ModelSpec {
    let params = ParamMap::new()
        .with("n_estimators", ParamValue::Int(100))
        .with("min_samples_leaf", ParamValue::Int(1))
        .with("bootstrap", ParamValue::Bool(true));
    ModelSpec::new(ModelKind::RandomForest, params, seed_value)
}

/// Learns the MIA vulnerability flag from model kind and hyperparameters
/// with a stratified 90:10 split.
pub fn fit_vulnerability_predictor(rows: &[ArchiveRow], seed_value: u64) -> Result<VulnerabilityPredictor> {
    let mut points = Vec::new();
    let mut labels = Vec::new();
    for r in rows {
        if let Some(v) = r.vulnerable_mia {
            points.push((r.kind, r.param_map()?));
            labels.push(usize::from(v));
        }
    }
    if points.len() < META_MIN_ROWS {
        return Err(Error::Argument(format!(
            "need at least {META_MIN_ROWS} flagged rows, got {}",
            points.len()
        )));
    }
    let n_vulnerable = labels.iter().filter(|&&l| l == 1).count();
    if n_vulnerable < 2 || labels.len() - n_vulnerable < 2 {
        return Err(Error::Training(format!(
            "need at least 2 rows of each vulnerability class, got {n_vulnerable} vulnerable of {}",
            labels.len()
        )));
    }
    let features = MetaFeatures::from_rows(&points);
    let encoded = points
        .iter()
        .map(|(k, p)| features.encode(*k, p))
        .collect::<Result<Vec<_>>>()?;

    let mut rng = seed::rng(seed::derive_seed(seed_value, 1));
    let (mut train_idx, mut test_idx) = (Vec::new(), Vec::new());
    for class in [0, 1] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        idx.shuffle(&mut rng);
        let n_test = idx.len().div_ceil(10).min(idx.len() - 1);
        test_idx.extend_from_slice(&idx[..n_test]);
        train_idx.extend_from_slice(&idx[n_test..]);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();

    let dict = features.dictionary();
    let build = |idx: &[usize]| -> Result<Dataset> {
        let m = Matrix::from_rows(&idx.iter().map(|&i| encoded[i].clone()).collect::<Vec<_>>())?;
        let ids = idx.iter().map(|i| format!("row{i}")).collect();
        Dataset::new(m, idx.iter().map(|&i| labels[i]).collect(), ids, dict.clone())
    };
    let train = build(&train_idx)?;
    let test = build(&test_idx)?;
    let model = models::fit(&meta_model_spec(seed::derive_seed(seed_value, 2)), &train)?;
    let predicted = model.predict(test.matrix())?;

    let mut correct = [0usize; 2];
    let mut total = [0usize; 2];
    for (&truth, &p) in test.labels().iter().zip(&predicted) {
        total[truth] += 1;
        correct[truth] += usize::from(p == truth);
    }
    // Inverse-frequency weights make each class contribute equally.
    let present: Vec<usize> = (0..2).filter(|&c| total[c] > 0).collect();
    let weighted_accuracy =
        present.iter().map(|&c| correct[c] as f64 / total[c] as f64).sum::<f64>() / present.len() as f64;
    let train_vulnerable = train.labels().iter().filter(|&&l| l == 1).count();
    Ok(VulnerabilityPredictor {
        features,
        model,
        weighted_accuracy,
        vulnerable_recall: correct[1] as f64 / total[1] as f64,
        majority_baseline_recall: if 2 * train_vulnerable > train.n_rows() { 1.0 } else { 0.0 },
        n_train: train.n_rows(),
        n_test: test.n_rows(),
        seed: seed_value,
    })
}
