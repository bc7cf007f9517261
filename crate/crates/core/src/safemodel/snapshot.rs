//! The record kept at fit time, used to detect later changes to a model.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::models::{ModelKind, ParamMap, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub kind: ModelKind,
    pub params: ParamMap,
    pub internals_digest: String,
    pub k_anonymity: Option<usize>,
    pub data_fingerprint: String,
    /// Supplied by the caller so that snapshots stay reproducible.
    pub timestamp: Option<String>,
}

/// Copies the parameters and hashes the internals of a freshly fitted model.
pub fn snapshot(model: &TrainedModel, train: Option<&Dataset>, timestamp: Option<String>) -> Snapshot {
    let k_anonymity = match (model.kind, train) {
        (ModelKind::DecisionTree | ModelKind::RandomForest, Some(ds)) => model.k_anonymity(ds).ok(),
        _ => None,
    };
    Snapshot {
        kind: model.kind,
        params: model.params.clone(),
        internals_digest: model.internals_digest(),
        k_anonymity,
        data_fingerprint: model.fit_meta.data_fingerprint.clone(),
        timestamp,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DifferenceKind {
    Parameter,
    Structural,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Difference {
    pub kind: DifferenceKind,
    pub message: String,
}

/// Parameter changes (in key order) followed by any structural change.
pub fn detect_tampering(model: &TrainedModel, snap: &Snapshot) -> Vec<Difference> {
    let mut keys: Vec<&String> = snap.params.keys().chain(model.params.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut out: Vec<Difference> = keys
        .into_iter()
        .filter_map(|k| {
            let (old, new) = (snap.params.get(k), model.params.get(k));
            (old != new).then(|| Difference {
                kind: DifferenceKind::Parameter,
                message: format!(
                    "parameter {k} changed from {} to {} after the model was fitted",
                    old.map_or("None".into(), ToString::to_string),
                    new.map_or("None".into(), ToString::to_string)
                ),
            })
        })
        .collect();
    let digest = model.internals_digest();
    if model.kind != snap.kind || digest != snap.internals_digest {
        out.push(Difference {
            kind: DifferenceKind::Structural,
            message: format!(
                "model internals changed after the model was fitted (digest {} is now {digest})",
                snap.internals_digest
            ),
        });
    }
    out
}

/// The tamper block of a release reason, empty when nothing changed.
pub fn parameter_change_text(diffs: &[Difference]) -> String {
    let params: Vec<&Difference> = diffs.iter().filter(|d| d.kind == DifferenceKind::Parameter).collect();
    if params.is_empty() {
        return String::new();
    }
    let mut s = format!("WARNING: basic parameters differ in {} places:\n", params.len());
    for d in params {
        s.push_str(&d.message);
        s.push('\n');
    }
    s
}
