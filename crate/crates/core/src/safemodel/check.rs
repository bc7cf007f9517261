//! Hyperparameter checks against a rule set, with automatic adjustment.

use serde::{Deserialize, Serialize};

use super::rules::{Rule, RuleSet, Violation};
use crate::models::{ModelKind, ParamMap};

pub const WITHIN_RANGES: &str = "Model parameters are within recommended ranges.\n";
pub const RISK_HEADER: &str = "WARNING: model parameters may present a disclosure risk:\n";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub violations: Vec<Violation>,
    pub adjusted_params: ParamMap,
    pub warnings: Vec<String>,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }

    /// The human-readable summary used as report details.
    pub fn details(&self) -> String {
        if self.passed() {
            WITHIN_RANGES.to_string()
        } else {
            let lines: Vec<&str> = self.violations.iter().map(|v| v.message.as_str()).collect();
            format!("{RISK_HEADER}{}", lines.join("\n"))
        }
    }
}

/// Evaluates every rule for `kind` on `params`. Violations of min, max and
/// equals rules are corrected in `adjusted_params`; type violations are not.
pub fn check_params(kind: ModelKind, params: &ParamMap, rules: &RuleSet) -> CheckResult {
    let Some(kind_rules) = rules.rules_for(kind) else {
        return CheckResult {
            violations: vec![Violation {
                keyword: String::new(),
                message: format!("- no rules defined for model kind {}", kind.class_name()),
                fix: None,
            }],
            adjusted_params: params.clone(),
            warnings: Vec::new(),
        };
    };
    let violations: Vec<Violation> = kind_rules.iter().flat_map(|r| r.violations(params)).collect();
    let adjusted = adjust(kind_rules, params);
    let mut warnings = Vec::new();
    for (key, value) in adjusted.iter() {
        if params.get(key) != Some(value) {
            warnings.push(format!("Changed parameter {key} = {value}."));
        }
    }
    for v in violations.iter().filter(|v| v.fix.is_none()) {
        warnings.push(format!("Parameter {} needs manual correction.", v.keyword));
    }
    CheckResult {
        violations,
        adjusted_params: adjusted,
        warnings,
    }
}

fn fix_pass(rules: &[Rule], params: &ParamMap) -> ParamMap {
    let mut out = params.clone();
    for v in rules.iter().flat_map(|r| r.violations(params)) {
        if let Some(value) = v.fix {
            out.insert(&v.keyword, value);
        }
    }
    out
}

/// Applies fixes until nothing changes. Contradictory rules can cycle; the
/// cycle's smallest state (by canonical JSON) is then chosen, which keeps
/// adjustment idempotent.
fn adjust(rules: &[Rule], params: &ParamMap) -> ParamMap {
    let mut seen = vec![params.clone()];
    loop {
        let next = fix_pass(rules, seen.last().expect("non-empty"));
        if Some(&next) == seen.last() {
            return next;
        }
        if let Some(pos) = seen.iter().position(|s| *s == next) {
            return seen
                .drain(pos..)
                .min_by_key(|s| serde_json::to_string(s).expect("params serialize"))
                .expect("cycle is non-empty");
        }
        seen.push(next);
    }
}
