//! The constraints file: per-model-kind rule trees over hyperparameters.

use std::collections::BTreeMap;
use std::fmt;

use serde::de::{MapAccess, Visitor};
use serde::{Deserialize, Deserializer, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::{ModelKind, ParamMap, ParamValue};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LeafOp {
    Min,
    Max,
    Equals,
    IsType,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CombOp {
    And,
    Or,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Rule {
    Leaf {
        keyword: String,
        operator: LeafOp,
        value: ParamValue,
    },
    Combinator {
        operator: CombOp,
        subexpr: Vec<Rule>,
    },
}

/// One rule that does not hold, with its Python-style message and the value
/// that would satisfy it, if any.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub keyword: String,
    pub message: String,
    #[serde(skip)]
    pub fix: Option<ParamValue>,
}

fn is_number(v: &ParamValue) -> bool {
    matches!(v, ParamValue::Int(_) | ParamValue::Real(_))
}

fn shown(v: Option<&ParamValue>) -> String {
    v.map_or_else(|| "None".to_string(), ToString::to_string)
}

/// `target` in the numeric representation of `current` when possible.
fn coerce(target: &ParamValue, current: Option<&ParamValue>) -> ParamValue {
    match (target, current) {
        (ParamValue::Int(i), Some(ParamValue::Real(_))) => ParamValue::Real(*i as f64),
        (ParamValue::Real(r), Some(ParamValue::Int(_))) if r.fract() == 0.0 => ParamValue::Int(*r as i64),
        _ => target.clone(),
    }
}

impl Rule {
    /// Whether the rule holds for `params`.
    pub fn holds(&self, params: &ParamMap) -> bool {
        match self {
            Rule::Leaf { keyword, operator, value } => leaf_holds(*operator, value, params.get(keyword)),
            Rule::Combinator { operator: CombOp::And, subexpr } => subexpr.iter().all(|r| r.holds(params)),
            Rule::Combinator { operator: CombOp::Or, subexpr } => subexpr.iter().any(|r| r.holds(params)),
        }
    }

    /// Violated leaves. For a failing `or`, the leaves of its first branch
    /// are reported so that fixing them satisfies the combinator.
    pub fn violations(&self, params: &ParamMap) -> Vec<Violation> {
        if self.holds(params) {
            return Vec::new();
        }
        match self {
            Rule::Leaf { keyword, operator, value } => {
                let current = params.get(keyword);
                let cur = shown(current);
                let (message, fix) = match operator {
                    LeafOp::Min => (
                        format!("- parameter {keyword} = {cur} identified as less than the recommended min value of {value}."),
                        Some(coerce(value, current)),
                    ),
                    LeafOp::Max => (
                        format!("- parameter {keyword} = {cur} identified as greater than the recommended max value of {value}."),
                        Some(coerce(value, current)),
                    ),
                    LeafOp::Equals => (
                        format!("- parameter {keyword} = {cur} identified as different than the recommended fixed value of {value}."),
                        Some(coerce(value, current)),
                    ),
                    LeafOp::IsType => (
                        format!("- parameter {keyword} = {cur} identified as different type to recommendation of {value}."),
                        None,
                    ),
                };
                vec![Violation {
                    keyword: keyword.clone(),
                    message,
                    fix,
                }]
            }
            Rule::Combinator { operator: CombOp::And, subexpr } => {
                subexpr.iter().flat_map(|r| r.violations(params)).collect()
            }
            Rule::Combinator { operator: CombOp::Or, subexpr } => subexpr
                .first()
                .map(|r| r.violations(params))
                .unwrap_or_default(),
        }
    }
}

fn leaf_holds(op: LeafOp, value: &ParamValue, current: Option<&ParamValue>) -> bool {
    let Some(cur) = current else { return false };
    match op {
        LeafOp::Min => match (cur.as_f64(), value.as_f64()) {
            (Some(c), Some(v)) if is_number(cur) => c >= v,
            _ => false,
        },
        LeafOp::Max => match (cur.as_f64(), value.as_f64()) {
            (Some(c), Some(v)) if is_number(cur) => c <= v,
            _ => false,
        },
        LeafOp::Equals => match (cur, value) {
            (a, b) if is_number(a) && is_number(b) => a.as_f64() == b.as_f64(),
            (a, b) => a == b,
        },
        LeafOp::IsType => matches!(value, ParamValue::Text(t) if t == cur.type_name()),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawRule {
    keyword: Option<String>,
    operator: String,
    value: Option<Value>,
    subexpr: Option<Vec<RawRule>>,
}

fn scalar(v: &Value) -> Option<ParamValue> {
    match v {
        Value::Bool(b) => Some(ParamValue::Bool(*b)),
        Value::Number(n) => n
            .as_i64()
            .map(ParamValue::Int)
            .or_else(|| n.as_f64().map(ParamValue::Real)),
        Value::String(s) => Some(ParamValue::Text(s.clone())),
        _ => None,
    }
}

fn convert(raw: RawRule) -> Result<Rule> {
    let schema = |m: String| Err(Error::Schema(m));
    match raw.operator.as_str() {
        "and" | "or" => {
            let operator = if raw.operator == "and" { CombOp::And } else { CombOp::Or };
            if raw.keyword.is_some() || raw.value.is_some() {
                return schema(format!("'{}' takes only subexpr", raw.operator));
            }
            let Some(sub) = raw.subexpr else {
                return schema(format!("'{}' needs a subexpr list", raw.operator));
            };
            if sub.is_empty() {
                return schema(format!("'{}' has an empty subexpr list", raw.operator));
            }
            Ok(Rule::Combinator {
                operator,
                subexpr: sub.into_iter().map(convert).collect::<Result<_>>()?,
            })
        }
        "min" | "max" | "equals" | "is_type" => {
            let operator = match raw.operator.as_str() {
                "min" => LeafOp::Min,
                "max" => LeafOp::Max,
                "equals" => LeafOp::Equals,
                _ => LeafOp::IsType,
            };
            if raw.subexpr.is_some() {
                return schema(format!("'{}' does not take subexpr", raw.operator));
            }
            let Some(keyword) = raw.keyword else {
                return schema(format!("'{}' rule has no keyword", raw.operator));
            };
            let Some(value) = raw.value.as_ref().and_then(scalar) else {
                return schema(format!("rule on '{keyword}' needs a scalar value"));
            };
            let consistent = match operator {
                LeafOp::Min | LeafOp::Max => is_number(&value),
                LeafOp::Equals => true,
                LeafOp::IsType => {
                    matches!(&value, ParamValue::Text(t) if ["int", "float", "bool", "str"].contains(&t.as_str()))
                }
            };
            if !consistent {
                return schema(format!("value {value} does not suit operator '{}' on '{keyword}'", raw.operator));
            }
            Ok(Rule::Leaf {
                keyword,
                operator,
                value,
            })
        }
        other => schema(format!("unknown operator '{other}'")),
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawKind {
    rules: Vec<RawRule>,
}

/// Map entries in file order, keeping duplicates so they can be rejected.
struct Entries(Vec<(String, RawKind)>);

impl<'de> Deserialize<'de> for Entries {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Entries;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("an object of model kinds")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> std::result::Result<Entries, A::Error> {
                let mut out = Vec::new();
                while let Some((k, v)) = map.next_entry::<String, RawKind>()? {
                    out.push((k, v));
                }
                Ok(Entries(out))
            }
        }
        d.deserialize_map(V)
    }
}

/// Rules per model kind, keyed by the kind's class name.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RuleSet {
    kinds: BTreeMap<String, Vec<Rule>>,
}

impl RuleSet {
    /// Rules for `kind`, looked up by class name or short name.
    pub fn rules_for(&self, kind: ModelKind) -> Option<&[Rule]> {
        self.kinds
            .get(kind.class_name())
            .or_else(|| self.kinds.get(kind.as_str()))
            .map(Vec::as_slice)
    }

    pub fn kinds(&self) -> impl Iterator<Item = (&String, &Vec<Rule>)> {
        self.kinds.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    pub fn insert(&mut self, kind: &str, rules: Vec<Rule>) {
        self.kinds.insert(kind.to_string(), rules);
    }
}

/// Parses a constraints file.
pub fn parse_rules(text: &[u8]) -> Result<RuleSet> {
    let entries: Entries = serde_json::from_slice(text).map_err(crate::dataset::json_error)?;
    let mut set = RuleSet::default();
    let mut seen_kinds = Vec::new();
    for (name, raw) in entries.0 {
        // two spellings of the same kind count as a duplicate
        let canonical = ModelKind::parse(&name).map_or(name.clone(), |k| k.class_name().to_string());
        if seen_kinds.contains(&canonical) {
            return Err(Error::Schema(format!("model kind '{name}' appears more than once")));
        }
        seen_kinds.push(canonical);
        let rules = raw.rules.into_iter().map(convert).collect::<Result<Vec<_>>>()?;
        set.kinds.insert(name, rules);
    }
    Ok(set)
}
