//! Release gating: hyperparameter rules, fit-time snapshots, tamper
//! detection and the release check battery.

mod check;
mod release;
mod rules;
mod snapshot;

pub use check::{check_params, CheckResult, RISK_HEADER, WITHIN_RANGES};
pub use release::{
    approve_sentence, read_report, request_release, write_report, CheckOutcome, MiaSummary, PipelineManifest,
    ReleaseChecks, ReleaseOutcome, ReleaseReport, ReleaseRequest, Status, Thresholds, DENY,
};
pub use rules::{parse_rules, CombOp, LeafOp, Rule, RuleSet, Violation};
pub use snapshot::{detect_tampering, parameter_change_text, snapshot, Difference, DifferenceKind, Snapshot};

#[cfg(test)]
mod tests;
