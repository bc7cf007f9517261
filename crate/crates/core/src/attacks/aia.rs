use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{Dataset, Encoding, FeatureSpec};
use crate::error::{Error, Result};
use crate::models::TrainedModel;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AiaSettings {
    pub attribute: String,
    #[serde(default = "default_n_samples")]
    pub n_samples: usize,
    #[serde(default = "default_k_pct")]
    pub k_pct: f64,
}

fn default_n_samples() -> usize {
    100
}

fn default_k_pct() -> f64 {
    10.0
}

impl AiaSettings {
    pub fn new(attribute: &str) -> Self {
        Self {
            attribute: attribute.into(),
            n_samples: default_n_samples(),
            k_pct: default_k_pct(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_samples < 2 {
            return Err(Error::Argument("n_samples must be at least 2".into()));
        }
        if !(self.k_pct > 0.0 && self.k_pct < 100.0) {
            return Err(Error::Argument("k_pct must lie in (0, 100)".into()));
        }
        Ok(())
    }
}

/// What the attacker inferred for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum AiaOutcome {
    /// `predicted` is `None` when several categories tie for the top
    /// confidence.
    Categorical {
        row: usize,
        truth: usize,
        predicted: Option<usize>,
    },
    Continuous {
        row: usize,
        truth: f64,
        lower: f64,
        upper: f64,
        at_risk: bool,
    },
}

impl AiaOutcome {
    pub fn success(&self) -> bool {
        match self {
            AiaOutcome::Categorical { truth, predicted, .. } => *predicted == Some(*truth),
            AiaOutcome::Continuous { at_risk, .. } => *at_risk,
        }
    }

    pub fn row(&self) -> usize {
        match self {
            AiaOutcome::Categorical { row, .. } | AiaOutcome::Continuous { row, .. } => *row,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct AiaAttributeReport {
    pub attribute: String,
    pub p_vulnerable_train: f64,
    pub p_vulnerable_test: f64,
    /// Infinite when only the test side is never vulnerable.
    #[serde(serialize_with = "ser_ratio", deserialize_with = "de_ratio")]
    pub ARR: f64,
    pub arr_infinite: bool,
    pub at_risk_train_ids: Vec<String>,
    pub baseline_improvement: f64,
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

fn de_ratio<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
        Raw::Text(t) => Err(serde::de::Error::custom(format!("bad ratio '{t}'"))),
    }
}

fn attribute<'a>(ds: &'a Dataset, name: &str) -> Result<&'a FeatureSpec> {
    ds.dictionary()
        .feature(name)
        .ok_or_else(|| Error::Argument(format!("attribute '{name}' is not in the data dictionary")))
}

fn observed_range(ds: &Dataset, col: usize) -> (f64, f64) {
    ds.matrix()
        .iter_rows()
        .map(|r| r[col])
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)))
}

/// Attribute inference over `records`, sampling continuous attributes across
/// the range observed in `records`.
pub fn aia_attribute(model: &TrainedModel, records: &Dataset, settings: &AiaSettings) -> Result<Vec<AiaOutcome>> {
    let f = attribute(records, &settings.attribute)?;
    let range = observed_range(records, f.indices[0]);
    aia_attribute_in_range(model, records, settings, range)
}

/// As [`aia_attribute`], with an explicit sampling range for continuous
/// attributes (ignored for categorical ones).
pub fn aia_attribute_in_range(
    model: &TrainedModel,
    records: &Dataset,
    settings: &AiaSettings,
    range: (f64, f64),
) -> Result<Vec<AiaOutcome>> {
    settings.validate()?;
    let f = attribute(records, &settings.attribute)?.clone();
    if records.width() != model.n_features() {
        return Err(Error::Shape("records and model differ in width".into()));
    }
    let mut out = vec![0.0; model.n_classes];
    let mut confidence = |q: &[f64], label: usize| {
        model.proba_row(q, &mut out);
        out[label]
    };
    let mut query = vec![0.0; records.width()];
    let mut outcomes = Vec::with_capacity(records.n_rows());
    match f.encoding {
        Encoding::Onehot => {
            for row in 0..records.n_rows() {
                let x = records.row(row);
                let truth = f.indices.iter().position(|&j| x[j] == 1.0).unwrap_or(0);
                let label = records.labels()[row];
                query.copy_from_slice(x);
                let confs: Vec<f64> = (0..f.indices.len())
                    .map(|c| {
                        for (k, &j) in f.indices.iter().enumerate() {
                            query[j] = if k == c { 1.0 } else { 0.0 };
                        }
                        confidence(&query, label)
                    })
                    .collect();
                let best = confs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let winners: Vec<usize> = (0..confs.len()).filter(|&c| confs[c] == best).collect();
                outcomes.push(AiaOutcome::Categorical {
                    row,
                    truth,
                    predicted: (winners.len() == 1).then(|| winners[0]),
                });
            }
        }
        Encoding::Int64 | Encoding::Float64 => {
            let (lo, hi) = range;
            if !(hi > lo) {
                return Err(Error::Degenerate(format!(
                    "attribute '{}' has a zero-width range",
                    f.name
                )));
            }
            let col = f.indices[0];
            let n = settings.n_samples;
            let grid: Vec<f64> = (0..n)
                .map(|i| if i == n - 1 { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 })
                .collect();
            for row in 0..records.n_rows() {
                let x = records.row(row);
                let truth = x[col];
                let label = records.labels()[row];
                query.copy_from_slice(x);
                let confs: Vec<f64> = grid
                    .iter()
                    .map(|&v| {
                        query[col] = v;
                        confidence(&query, label)
                    })
                    .collect();
                let best = confs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let first = confs.iter().position(|&c| c == best).unwrap_or(0);
                let last = confs.iter().rposition(|&c| c == best).unwrap_or(0);
                let (lower, upper) = (grid[first], grid[last]);
                let tol = settings.k_pct / 100.0 * truth.abs();
                let at_risk = (lower - truth).abs() <= tol && (upper - truth).abs() <= tol;
                outcomes.push(AiaOutcome::Continuous {
                    row,
                    truth,
                    lower,
                    upper,
                    at_risk,
                });
            }
        }
    }
    Ok(outcomes)
}

fn success_rate(outcomes: &[AiaOutcome]) -> f64 {
    outcomes.iter().filter(|o| o.success()).count() as f64 / outcomes.len() as f64
}

/// Accuracy of always guessing the most frequent training value.
fn most_frequent_accuracy(train: &Dataset, f: &FeatureSpec, k_pct: f64) -> f64 {
    let values: Vec<f64> = (0..train.n_rows())
        .map(|i| {
            let x = train.row(i);
            match f.encoding {
                Encoding::Onehot => f.indices.iter().position(|&j| x[j] == 1.0).unwrap_or(0) as f64,
                _ => x[f.indices[0]],
            }
        })
        .collect();
    let mut sorted = values.clone();
    sorted.sort_by(f64::total_cmp);
    let (mut mode, mut best, mut i) = (sorted[0], 0, 0);
    while i < sorted.len() {
        let run = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        if run > best {
            best = run;
            mode = sorted[i];
        }
        i += run;
    }
    let hits = values
        .iter()
        .filter(|&&v| match f.encoding {
            Encoding::Onehot => v == mode,
            _ => (mode - v).abs() <= k_pct / 100.0 * v.abs(),
        })
        .count();
    hits as f64 / values.len() as f64
}

/// Compares attribute-inference success on training records with success on
/// unseen records.
pub fn attribute_risk_ratio(
    model: &TrainedModel,
    train: &Dataset,
    test: &Dataset,
    settings: &AiaSettings,
) -> Result<AiaAttributeReport> {
    let f = attribute(train, &settings.attribute)?.clone();
    let range = observed_range(train, f.indices[0]);
    let train_out = aia_attribute_in_range(model, train, settings, range)?;
    let test_out = aia_attribute_in_range(model, test, settings, range)?;
    let p_train = success_rate(&train_out);
    let p_test = success_rate(&test_out);
    let (arr, infinite) = if p_test > 0.0 {
        (p_train / p_test, false)
    } else if p_train > 0.0 {
        (f64::INFINITY, true)
    } else {
        (0.0, false)
    };
    let at_risk_train_ids = train_out
        .iter()
        .filter(|o| o.success())
        .map(|o| train.group_ids()[o.row()].clone())
        .collect();
    Ok(AiaAttributeReport {
        attribute: f.name.clone(),
        p_vulnerable_train: p_train,
        p_vulnerable_test: p_test,
        ARR: arr,
        arr_infinite: infinite,
        at_risk_train_ids,
        baseline_improvement: p_train - most_frequent_accuracy(train, &f, settings.k_pct),
    })
}
