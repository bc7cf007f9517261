use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Encoding {
    Onehot,
    Int64,
    Float64,
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Encoding::Onehot => "onehot",
            Encoding::Int64 => "int64",
            Encoding::Float64 => "float64",
        })
    }
}

/// One model input: a name, the encoded columns it occupies, and how those
/// columns are encoded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub name: String,
    pub indices: Vec<usize>,
    pub encoding: Encoding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    pub classes: Vec<String>,
}

/// Machine-readable description of a model's inputs and output classes.
///
/// The JSON form is `{"features": [...], "target": {"name", "classes"}}`;
/// the order of `features` is significant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataDictionary {
    pub features: Vec<FeatureSpec>,
    pub target: TargetSpec,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFeature {
    name: String,
    indices: Vec<usize>,
    encoding: String,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDictionary {
    features: Vec<RawFeature>,
    target: TargetSpec,
}

pub(crate) fn json_error(e: serde_json::Error) -> Error {
    use serde_json::error::Category;
    match e.classify() {
        Category::Data => Error::Schema(e.to_string()),
        _ => Error::Parse(e.to_string()),
    }
}

pub fn parse_data_dictionary(text: &[u8]) -> Result<DataDictionary> {
    let raw: RawDictionary = serde_json::from_slice(text).map_err(json_error)?;
    let features = raw
        .features
        .into_iter()
        .map(|f| {
            let encoding = match f.encoding.as_str() {
                "onehot" => Encoding::Onehot,
                "int64" => Encoding::Int64,
                "float64" => Encoding::Float64,
                other => {
                    return Err(Error::Schema(format!(
                        "feature '{}' has unknown encoding '{other}'",
                        f.name
                    )))
                }
            };
            Ok(FeatureSpec {
                name: f.name,
                indices: f.indices,
                encoding,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let dict = DataDictionary {
        features,
        target: raw.target,
    };
    dict.validate()?;
    Ok(dict)
}

impl DataDictionary {
    pub fn validate(&self) -> Result<()> {
        if self.features.is_empty() {
            return Err(Error::Schema("dictionary declares no features".into()));
        }
        let mut seen = BTreeSet::new();
        let mut names = BTreeSet::new();
        for f in &self.features {
            if !names.insert(f.name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name '{}'", f.name)));
            }
            match (f.encoding, f.indices.len()) {
                (_, 0) => {
                    return Err(Error::Schema(format!("feature '{}' has no indices", f.name)))
                }
                (Encoding::Onehot, 1) => {
                    return Err(Error::Schema(format!(
                        "onehot feature '{}' needs at least two indices",
                        f.name
                    )))
                }
                (Encoding::Int64 | Encoding::Float64, n) if n != 1 => {
                    return Err(Error::Schema(format!(
                        "{} feature '{}' must have exactly one index, got {n}",
                        f.encoding, f.name
                    )))
                }
                _ => {}
            }
            for &i in &f.indices {
                if !seen.insert(i) {
                    return Err(Error::Schema(format!(
                        "column {i} is claimed by more than one feature"
                    )));
                }
            }
        }
        let width = self.width();
        if seen.len() != width {
            let missing: Vec<usize> = (0..width).filter(|i| !seen.contains(i)).collect();
            return Err(Error::Schema(format!(
                "feature indices leave gaps at columns {missing:?}"
            )));
        }
        if self.target.classes.len() < 2 {
            return Err(Error::Schema("target needs at least two classes".into()));
        }
        let distinct: BTreeSet<&String> = self.target.classes.iter().collect();
        if distinct.len() != self.target.classes.len() {
            return Err(Error::Schema("target classes must be distinct".into()));
        }
        Ok(())
    }

    /// Encoded matrix width, inferred from the largest declared index.
    pub fn width(&self) -> usize {
        self.features
            .iter()
            .flat_map(|f| f.indices.iter())
            .max()
            .map_or(0, |m| m + 1)
    }

    pub fn n_classes(&self) -> usize {
        self.target.classes.len()
    }

    pub fn feature(&self, name: &str) -> Option<&FeatureSpec> {
        self.features.iter().find(|f| f.name == name)
    }

    /// Header name of each encoded column, in index order.
    pub fn column_names(&self) -> Vec<String> {
        let mut names = vec![String::new(); self.width()];
        for f in &self.features {
            if f.indices.len() == 1 {
                names[f.indices[0]] = f.name.clone();
            } else {
                for (k, &i) in f.indices.iter().enumerate() {
                    names[i] = format!("{}_{k}", f.name);
                }
            }
        }
        names
    }

    /// Encoding of each encoded column, in index order.
    pub fn column_encodings(&self) -> Vec<Encoding> {
        let mut enc = vec![Encoding::Float64; self.width()];
        for f in &self.features {
            for &i in &f.indices {
                enc[i] = f.encoding;
            }
        }
        enc
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("dictionary serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const DOCUMENTED_EXAMPLE: &str = r#"{
      "features": [
        {"name": "parents", "indices": [0, 1, 2], "encoding": "onehot"},
        {"name": "has_nurs", "indices": [3, 4, 5, 6, 7], "encoding": "onehot"},
        {"name": "assessment_completed", "indices": [8, 9, 10, 11], "encoding": "onehot"},
        {"name": "children", "indices": [12, 13, 14, 15], "encoding": "onehot"},
        {"name": "atrialfibrillation", "indices": [16], "encoding": "int64"}
      ],
      "target": {"name": "outcome", "classes": ["0", "1"]}
    }"#;

    #[test]
    fn parses_template_example() {
        let d = parse_data_dictionary(DOCUMENTED_EXAMPLE.as_bytes()).unwrap();
        assert_eq!(d.features.len(), 5);
        assert_eq!(d.width(), 17);
        assert_eq!(d.features[0].indices, vec![0, 1, 2]);
        assert_eq!(d.features[4].encoding, Encoding::Int64);
        assert_eq!(d.column_names()[2], "parents_2");
        assert_eq!(d.column_names()[16], "atrialfibrillation");
    }

    #[test]
    fn minimal_dictionary() {
        let d = parse_data_dictionary(
            br#"{"features":[{"name":"x","indices":[0],"encoding":"float64"}],"target":{"name":"y","classes":["0","1"]}}"#,
        )
        .unwrap();
        assert_eq!(d.features.len(), 1);
        assert_eq!(d.width(), 1);
    }

    #[test]
    fn overlapping_indices_rejected() {
        let e = parse_data_dictionary(
            br#"{"features":[{"name":"a","indices":[0,1,2,3],"encoding":"onehot"},{"name":"b","indices":[3],"encoding":"int64"}],"target":{"name":"y","classes":["0","1"]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Schema(_)), "{e}");
    }

    #[test]
    fn gaps_rejected() {
        let e = parse_data_dictionary(
            br#"{"features":[{"name":"a","indices":[0],"encoding":"int64"},{"name":"b","indices":[2],"encoding":"int64"}],"target":{"name":"y","classes":["0","1"]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Schema(_)));
    }

    #[test]
    fn unknown_encoding_and_bad_json() {
        let e = parse_data_dictionary(
            br#"{"features":[{"name":"a","indices":[0],"encoding":"utf8"}],"target":{"name":"y","classes":["0","1"]}}"#,
        )
        .unwrap_err();
        assert!(matches!(e, Error::Schema(_)));
        assert!(matches!(parse_data_dictionary(b"{\"features\": ["), Err(Error::Parse(_))));
    }

    #[test]
    fn arity_rules() {
        let one_hot_single = br#"{"features":[{"name":"a","indices":[0],"encoding":"onehot"}],"target":{"name":"y","classes":["0","1"]}}"#;
        assert!(matches!(parse_data_dictionary(one_hot_single), Err(Error::Schema(_))));
        let float_pair = br#"{"features":[{"name":"a","indices":[0,1],"encoding":"float64"}],"target":{"name":"y","classes":["0","1"]}}"#;
        assert!(matches!(parse_data_dictionary(float_pair), Err(Error::Schema(_))));
        let one_class = br#"{"features":[{"name":"a","indices":[0],"encoding":"float64"}],"target":{"name":"y","classes":["0"]}}"#;
        assert!(matches!(parse_data_dictionary(one_class), Err(Error::Schema(_))));
    }
}
