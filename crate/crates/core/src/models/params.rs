use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A hyperparameter value carrying its type tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Real(f64),
    Text(String),
}

impl ParamValue {
    pub fn type_name(&self) -> &'static str {
        match self {
            ParamValue::Bool(_) => "bool",
            ParamValue::Int(_) => "int",
            ParamValue::Real(_) => "float",
            ParamValue::Text(_) => "str",
        }
    }

    pub fn as_f64(&self) -> Option<f64> {
        match *self {
            ParamValue::Int(i) => Some(i as f64),
            ParamValue::Real(r) => Some(r),
            _ => None,
        }
    }

    /// Integers, or reals with no fractional part.
    pub fn as_i64(&self) -> Option<i64> {
        match *self {
            ParamValue::Int(i) => Some(i),
            ParamValue::Real(r) if r.fract() == 0.0 && r.abs() < 9.0e15 => Some(r as i64),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match *self {
            ParamValue::Bool(b) => Some(b),
            _ => None,
        }
    }
}

/// Renders values the way the constraint reports print them (`True`, `5`, `0.1`).
impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(true) => f.write_str("True"),
            ParamValue::Bool(false) => f.write_str("False"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Real(r) => write!(f, "{r:?}"),
            ParamValue::Text(s) => f.write_str(s),
        }
    }
}

/// Ordered name → value map; ordering keeps serialization canonical.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamMap(BTreeMap<String, ParamValue>);

impl ParamMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, key: &str, value: ParamValue) -> Self {
        self.0.insert(key.to_string(), value);
        self
    }

    pub fn get(&self, key: &str) -> Option<&ParamValue> {
        self.0.get(key)
    }

    pub fn insert(&mut self, key: &str, value: ParamValue) -> Option<ParamValue> {
        self.0.insert(key.to_string(), value)
    }

    pub fn remove(&mut self, key: &str) -> Option<ParamValue> {
        self.0.remove(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamValue)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// `k=v;k=v` in key order, for archive columns.
    pub fn flatten(&self) -> String {
        self.0
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

impl FromIterator<(String, ParamValue)> for ParamMap {
    fn from_iter<T: IntoIterator<Item = (String, ParamValue)>>(iter: T) -> Self {
        Self(iter.into_iter().collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    DecisionTree,
    RandomForest,
    LogisticRegression,
    Knn,
    DpSvc,
}

impl ModelKind {
    pub const ALL: [ModelKind; 5] = [
        ModelKind::DecisionTree,
        ModelKind::RandomForest,
        ModelKind::LogisticRegression,
        ModelKind::Knn,
        ModelKind::DpSvc,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "decision_tree",
            ModelKind::RandomForest => "random_forest",
            ModelKind::LogisticRegression => "logistic_regression",
            ModelKind::Knn => "knn",
            ModelKind::DpSvc => "dp_svc",
        }
    }

    /// Name used in rules files and release reports.
    pub fn class_name(self) -> &'static str {
        match self {
            ModelKind::DecisionTree => "DecisionTreeClassifier",
            ModelKind::RandomForest => "RandomForestClassifier",
            ModelKind::LogisticRegression => "LogisticRegression",
            ModelKind::Knn => "KNeighborsClassifier",
            ModelKind::DpSvc => "SVC",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        ModelKind::ALL
            .into_iter()
            .find(|k| k.as_str() == name || k.class_name() == name)
            .ok_or_else(|| Error::Kind(format!("unknown model kind '{name}'")))
    }

    pub fn is_instance_based(self) -> bool {
        self == ModelKind::Knn
    }

    /// Documented hyperparameters with their defaults; `None` means "unset"
    /// (for `max_depth`, unlimited).
    pub fn documented_params(self) -> &'static [(&'static str, Option<DefaultValue>)] {
        use DefaultValue::*;
        match self {
            ModelKind::DecisionTree => &[("min_samples_leaf", Some(I(1))), ("max_depth", None)],
            ModelKind::RandomForest => &[
                ("n_estimators", Some(I(100))),
                ("min_samples_leaf", Some(I(1))),
                ("max_depth", None),
                ("bootstrap", Some(B(true))),
            ],
            ModelKind::LogisticRegression => &[
                ("learning_rate", Some(R(0.5))),
                ("l2", Some(R(0.001))),
                ("epochs", Some(I(300))),
            ],
            ModelKind::Knn => &[("k", Some(I(5)))],
            ModelKind::DpSvc => &[
                ("dhat", Some(I(1000))),
                ("C", Some(R(1.0))),
                ("eps", Some(R(10.0))),
                ("delta", Some(R(0.0))),
                ("gamma", Some(R(0.1))),
            ],
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy)]
pub enum DefaultValue {
    I(i64),
    R(f64),
    B(bool),
}

impl From<DefaultValue> for ParamValue {
    fn from(d: DefaultValue) -> Self {
        match d {
            DefaultValue::I(i) => ParamValue::Int(i),
            DefaultValue::R(r) => ParamValue::Real(r),
            DefaultValue::B(b) => ParamValue::Bool(b),
        }
    }
}

/// What to fit: a model kind, its hyperparameters and the seed for any
/// randomness in training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    #[serde(default)]
    pub params: ParamMap,
    #[serde(default)]
    pub seed: u64,
}

impl ModelSpec {
    pub fn new(kind: ModelKind, params: ParamMap, seed: u64) -> Self {
        Self { kind, params, seed }
    }

    /// Rejects keys outside the kind's documented set.
    pub fn check_keys(&self) -> Result<()> {
        let documented = self.kind.documented_params();
        for key in self.params.keys() {
            if !documented.iter().any(|(k, _)| k == key) {
                return Err(Error::Spec(format!(
                    "'{key}' is not a {} parameter",
                    self.kind
                )));
            }
        }
        Ok(())
    }

    /// Supplied parameters over the kind's defaults.
    pub fn resolved_params(&self) -> Result<ParamMap> {
        self.check_keys()?;
        let mut out = ParamMap::new();
        for (key, default) in self.kind.documented_params() {
            if let Some(v) = self.params.get(key) {
                out.insert(key, v.clone());
            } else if let Some(d) = default {
                out.insert(key, (*d).into());
            }
        }
        Ok(out)
    }
}

pub(crate) fn int_param(params: &ParamMap, key: &str) -> Result<Option<i64>> {
    params
        .get(key)
        .map(|v| {
            v.as_i64()
                .ok_or_else(|| Error::Spec(format!("parameter {key} = {v} is not an integer")))
        })
        .transpose()
}

pub(crate) fn positive_int(params: &ParamMap, key: &str) -> Result<usize> {
    match int_param(params, key)? {
        Some(v) if v > 0 => Ok(v as usize),
        Some(v) => Err(Error::Spec(format!("parameter {key} must be positive, got {v}"))),
        None => Err(Error::Spec(format!("parameter {key} is required"))),
    }
}

pub(crate) fn real_param(params: &ParamMap, key: &str) -> Result<f64> {
    let v = params
        .get(key)
        .ok_or_else(|| Error::Spec(format!("parameter {key} is required")))?;
    v.as_f64()
        .filter(|x| x.is_finite())
        .ok_or_else(|| Error::Spec(format!("parameter {key} = {v} is not a finite number")))
}

pub(crate) fn bool_param(params: &ParamMap, key: &str) -> Result<bool> {
    let v = params
        .get(key)
        .ok_or_else(|| Error::Spec(format!("parameter {key} is required")))?;
    v.as_bool()
        .ok_or_else(|| Error::Spec(format!("parameter {key} = {v} is not a boolean")))
}
