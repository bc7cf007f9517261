//! The release battery and its report.

use serde::{Deserialize, Serialize};

use super::check::check_params;
use super::rules::RuleSet;
use super::snapshot::{detect_tampering, parameter_change_text, DifferenceKind, Snapshot};
use crate::attacks::{attribute_risk_ratio, lira_mia, worst_case_mia, AiaAttributeReport, AiaSettings};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{attacker_probability, macro_auc, MetricSet};
use crate::models::{self, ModelKind, ModelSpec, TrainedModel};
use crate::seed::derive_seed;

pub const DENY: &str = "Do not allow release";

pub fn approve_sentence(model_file: &str) -> String {
    let base = std::path::Path::new(model_file)
        .file_name()
        .map_or_else(|| model_file.to_string(), |n| n.to_string_lossy().into_owned());
    format!("Run file {base} through next step of checking procedure")
}

/// Where the release battery draws the line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Thresholds {
    /// Deny when the attack AUC exceeds the upper edge of its chance band.
    pub auc_above_null_band: bool,
    /// Deny when the prevalence-difference p-value is below this.
    pub pdif: f64,
    /// Deny when TPR at FPR 0.1 reaches this.
    pub tpr_at_fpr_01: f64,
    /// Deny when any attribute risk ratio exceeds this.
    pub arr: f64,
    /// Training records an attribute attack must get right before its ratio
    /// can deny; ratios of a handful of hits are noise.
    pub arr_min_at_risk: usize,
    /// Warn when model bytes exceed this fraction of the training-data bytes.
    pub size_warn_fraction: f64,
    /// Flag when holdout AUC falls this far below the claimed AUC.
    pub perf_drift: f64,
    pub min_k_anonymity: Option<usize>,
}

impl Default for Thresholds {
    fn default() -> Self {
        Self {
            auc_above_null_band: true,
            pdif: 0.05,
            tpr_at_fpr_01: 0.2,
            arr: 1.25,
            arr_min_at_risk: 10,
            size_warn_fraction: 0.1,
            perf_drift: 0.05,
            min_k_anonymity: None,
        }
    }
}

impl Thresholds {
    /// Reasons a membership-attack result is too strong; empty when benign.
    pub fn mia_crossings(&self, m: &MetricSet) -> Vec<String> {
        let mut out = Vec::new();
        if self.auc_above_null_band && m.AUC > m.AUC_null_hi {
            out.push(format!("attack AUC {:.4} above chance band upper edge {:.4}", m.AUC, m.AUC_null_hi));
        }
        if m.PDIF < self.pdif {
            out.push(format!("PDIF {:.4} below {}", m.PDIF, self.pdif));
        }
        if let Some(&t) = m.tpr_at_fpr.get("0.1") {
            if t >= self.tpr_at_fpr_01 {
                out.push(format!("TPR at FPR 0.1 is {t:.4}, at least {}", self.tpr_at_fpr_01));
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineManifest {
    pub n_input_rows: usize,
    pub n_output_rows: usize,
    pub augmentation_declared: bool,
}

/// Everything the output checker supplies with a release request.
#[derive(Debug, Clone)]
pub struct ReleaseRequest<'a> {
    pub model_bytes: &'a [u8],
    pub model_file: &'a str,
    pub snapshot: &'a Snapshot,
    pub rules: &'a RuleSet,
    pub train: &'a Dataset,
    pub holdout: Option<&'a Dataset>,
    pub researcher: &'a str,
    pub claimed_auc: Option<f64>,
    pub pipeline: Option<PipelineManifest>,
    pub prior: f64,
    pub seed: u64,
    pub thresholds: Thresholds,
    /// Also attack each member of an ensemble.
    pub white_box: bool,
    pub n_shadow: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Warn,
    Fail,
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckOutcome {
    pub name: String,
    pub status: Status,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiaSummary {
    pub metrics: MetricSet,
    pub attacker_probability: Option<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseChecks {
    pub seed: u64,
    pub checker_seed: u64,
    pub prior: f64,
    pub thresholds: Thresholds,
    pub outcomes: Vec<CheckOutcome>,
    pub k_anonymity: Option<usize>,
    pub model_bytes: usize,
    pub data_bytes: usize,
    pub embedded_training_rows: Option<usize>,
    pub holdout_auc: Option<f64>,
    pub worst_case_mia: Option<MiaSummary>,
    pub lira: Option<MiaSummary>,
    pub aia: Vec<AiaAttributeReport>,
    pub member_tree_mia_auc: Vec<f64>,
    pub released_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReleaseReport {
    pub researcher: String,
    pub model_type: String,
    pub model_save_file: String,
    pub details: String,
    pub recommendation: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub reason: Option<String>,
    pub checks: ReleaseChecks,
}

impl ReleaseReport {
    pub fn approved(&self) -> bool {
        self.recommendation != DENY
    }
}

/// Pretty JSON in field order, newline terminated.
pub fn write_report(report: &ReleaseReport) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(report).expect("report serializes");
    out.push(b'\n');
    out
}

pub fn read_report(bytes: &[u8]) -> Result<ReleaseReport> {
    serde_json::from_slice(bytes).map_err(|e| Error::Format(format!("not a release report: {e}")))
}

/// The report plus the model that would actually be released, when that
/// differs from the submitted one.
#[derive(Debug, Clone)]
pub struct ReleaseOutcome {
    pub report: ReleaseReport,
    pub released_model: Option<TrainedModel>,
}

struct Battery {
    outcomes: Vec<CheckOutcome>,
    reasons: Vec<String>,
}

impl Battery {
    fn record(&mut self, name: &str, status: Status, message: impl Into<String>) {
        let message = message.into();
        if status == Status::Fail {
            self.reasons.push(format!("WARNING: {name}: {message}\n"));
        }
        self.outcomes.push(CheckOutcome {
            name: name.into(),
            status,
            message,
        });
    }
}

fn model_auc(model: &TrainedModel, ds: &Dataset) -> Result<f64> {
    macro_auc(&model.predict_proba(ds.matrix())?, ds.labels())
}

fn summarize(m: MetricSet, prior: f64, seed: u64) -> MiaSummary {
    let p = match (m.rates.TPR, m.rates.FPR) {
        (Some(t), Some(f)) => attacker_probability(prior, t, f).ok(),
        _ => None,
    };
    MiaSummary {
        metrics: m,
        attacker_probability: p,
        seed,
    }
}

/// Runs the full battery and assembles the report.
pub fn request_release(req: &ReleaseRequest) -> Result<ReleaseOutcome> {
    let holdout = req
        .holdout
        .ok_or_else(|| Error::Config("release checks need a holdout dataset".into()))?;
    if req.train.shares_groups_with(holdout) {
        return Err(Error::Leakage("holdout shares individuals with the training data".into()));
    }
    let model = TrainedModel::from_json_bytes(req.model_bytes)?;
    let th = &req.thresholds;
    let checker_seed = derive_seed(req.seed, 0x5EED);
    let mut b = Battery {
        outcomes: Vec::new(),
        reasons: Vec::new(),
    };

    // 1: constraints
    let check = check_params(model.kind, &model.params, req.rules);
    let details = check.details();
    let constraints_failed = !check.passed();
    b.outcomes.push(CheckOutcome {
        name: "constraints".into(),
        status: if constraints_failed { Status::Fail } else { Status::Pass },
        message: details.clone(),
    });

    // 2 and 3: tampering
    let diffs = detect_tampering(&model, req.snapshot);
    let tamper_text = parameter_change_text(&diffs);
    b.outcomes.push(CheckOutcome {
        name: "parameter_tampering".into(),
        status: if tamper_text.is_empty() { Status::Pass } else { Status::Fail },
        message: tamper_text.clone(),
    });
    let structural: Vec<&str> = diffs
        .iter()
        .filter(|d| d.kind == DifferenceKind::Structural)
        .map(|d| d.message.as_str())
        .collect();
    if structural.is_empty() {
        b.outcomes.push(CheckOutcome {
            name: "internals_tampering".into(),
            status: Status::Pass,
            message: "internals match the fit-time snapshot".into(),
        });
    } else {
        b.record("internals_tampering", Status::Fail, structural.join("; "));
    }
    if req.train.fingerprint() != req.snapshot.data_fingerprint {
        b.record(
            "training_data_provenance",
            Status::Fail,
            "training data differs from the data recorded at fit time",
        );
    }

    // 4: instance-based models
    let embedded = model.embedded_training_rows(req.train).ok().map(|e| e.count);
    if model.kind.is_instance_based() {
        b.record(
            "instance_based",
            Status::Fail,
            format!(
                "{} models store training rows and cannot be released ({} rows embedded)",
                model.kind.class_name(),
                embedded.map_or("unknown".into(), |n| n.to_string())
            ),
        );
    } else {
        b.record("instance_based", Status::Pass, "model does not store training rows");
    }

    // 5: differential privacy and checker-chosen seed
    let mut released = model.clone();
    let mut released_model = None;
    if model.kind == ModelKind::DpSvc {
        let spec = ModelSpec::new(model.kind, model.params.clone(), checker_seed);
        match models::fit(&spec, req.train) {
            Ok(refit) => {
                let eps = model.params.get("eps").map_or("unset".into(), ToString::to_string);
                b.record(
                    "differential_privacy",
                    Status::Pass,
                    format!("output perturbation with eps = {eps}; refitted with checker seed {checker_seed}"),
                );
                released = refit.clone();
                released_model = Some(refit);
            }
            Err(e) => b.record("differential_privacy", Status::Fail, format!("refit failed: {e}")),
        }
    } else {
        b.record("differential_privacy", Status::Skipped, "not a differentially private model kind");
    }

    // 6: k-anonymity
    let k_anonymity = released.k_anonymity(req.train).ok();
    match (k_anonymity, th.min_k_anonymity) {
        (None, _) => b.record("k_anonymity", Status::Skipped, "not defined for this model kind"),
        (Some(k), Some(min)) if k < min => b.record("k_anonymity", Status::Fail, format!("k = {k} below {min}")),
        (Some(k), _) => b.record("k_anonymity", Status::Pass, format!("k = {k}")),
    }

    // 7: file size
    let model_bytes = req.model_bytes.len();
    let data_bytes = req.train.csv_size();
    if model_bytes >= data_bytes {
        b.record(
            "model_size",
            Status::Fail,
            format!("model file ({model_bytes} bytes) is not smaller than the training data ({data_bytes} bytes)"),
        );
    } else if model_bytes as f64 > th.size_warn_fraction * data_bytes as f64 {
        b.record(
            "model_size",
            Status::Warn,
            format!("model file ({model_bytes} bytes) is within an order of magnitude of the training data ({data_bytes} bytes)"),
        );
    } else {
        b.record("model_size", Status::Pass, format!("{model_bytes} model bytes, {data_bytes} data bytes"));
    }

    // 8: holdout performance against the researcher's claim
    let holdout_auc = model_auc(&released, holdout).ok();
    match (req.claimed_auc, holdout_auc) {
        (None, _) => b.record("holdout_performance", Status::Skipped, "no claimed AUC supplied"),
        (Some(_), None) => b.record("holdout_performance", Status::Fail, "holdout AUC undefined"),
        (Some(claim), Some(got)) if got < claim - th.perf_drift => b.record(
            "holdout_performance",
            Status::Fail,
            format!("holdout AUC {got:.4} is more than {} below the claimed {claim}", th.perf_drift),
        ),
        (Some(claim), Some(got)) => {
            b.record("holdout_performance", Status::Pass, format!("holdout AUC {got:.4}, claimed {claim}"))
        }
    }

    // 9: pipeline row counts
    match req.pipeline {
        None => b.record("pipeline_rows", Status::Skipped, "no pipeline manifest supplied"),
        Some(p) if p.n_output_rows > p.n_input_rows && !p.augmentation_declared => b.record(
            "pipeline_rows",
            Status::Fail,
            format!("pipeline increased rows from {} to {} without declaring augmentation", p.n_input_rows, p.n_output_rows),
        ),
        Some(p) if p.n_output_rows > p.n_input_rows => b.record(
            "pipeline_rows",
            Status::Warn,
            format!("declared augmentation from {} to {} rows", p.n_input_rows, p.n_output_rows),
        ),
        Some(_) => b.record("pipeline_rows", Status::Pass, "row count not increased"),
    }

    // 10: worst-case membership inference
    let wc_seed = derive_seed(req.seed, 1);
    let worst = match worst_case_mia(&released, req.train, holdout, wc_seed) {
        Ok(r) => {
            let crossings = th.mia_crossings(&r.metrics);
            if crossings.is_empty() {
                b.record("worst_case_mia", Status::Pass, format!("attack AUC {:.4}", r.metrics.AUC));
            } else {
                b.record("worst_case_mia", Status::Fail, crossings.join("; "));
            }
            Some(summarize(r.metrics, req.prior, wc_seed))
        }
        Err(e) => {
            b.record("worst_case_mia", Status::Fail, format!("attack could not run: {e}"));
            None
        }
    };

    // 11: attribute inference on every attribute
    let mut aia = Vec::new();
    for f in &req.train.dictionary().features {
        match attribute_risk_ratio(&released, req.train, holdout, &AiaSettings::new(&f.name)) {
            Ok(r) => aia.push(r),
            Err(Error::Degenerate(_)) => {}
            Err(e) => b.record("worst_case_aia", Status::Fail, format!("{}: {e}", f.name)),
        }
    }
    let risky: Vec<String> = aia
        .iter()
        .filter(|r| r.ARR > th.arr && r.at_risk_train_ids.len() >= th.arr_min_at_risk)
        .map(|r| format!("{} (ARR {})", r.attribute, if r.arr_infinite { "inf".into() } else { format!("{:.3}", r.ARR) }))
        .collect();
    if risky.is_empty() {
        b.record("worst_case_aia", Status::Pass, format!("{} attributes assessed", aia.len()));
    } else {
        b.record(
            "worst_case_aia",
            Status::Fail,
            format!("attribute risk ratio above {} for {}", th.arr, risky.join(", ")),
        );
    }

    // 12: likelihood-ratio attack
    let lira_seed = derive_seed(req.seed, 2);
    let spec = ModelSpec::new(released.kind, released.params.clone(), released.fit_meta.seed);
    let lira = match lira_mia(&spec, &released, req.train, holdout, req.n_shadow, lira_seed) {
        Ok(r) => {
            let crossings = th.mia_crossings(&r.metrics);
            if crossings.is_empty() {
                b.record("lira", Status::Pass, format!("attack AUC {:.4}", r.metrics.AUC));
            } else {
                b.record("lira", Status::Fail, crossings.join("; "));
            }
            Some(summarize(r.metrics, req.prior, lira_seed))
        }
        Err(e) => {
            b.record("lira", Status::Fail, format!("attack could not run: {e}"));
            None
        }
    };

    // ensemble members, attacked individually for white-box release
    let mut member_aucs = Vec::new();
    if req.white_box && released.kind == ModelKind::RandomForest {
        let mut unsafe_members = Vec::new();
        for (t, tree) in released.member_trees().iter().enumerate() {
            let r = worst_case_mia(tree, req.train, holdout, derive_seed(req.seed, 1000 + t as u64))?;
            if !th.mia_crossings(&r.metrics).is_empty() {
                unsafe_members.push(t);
            }
            member_aucs.push(r.metrics.AUC);
        }
        if unsafe_members.is_empty() {
            b.record("ensemble_members", Status::Pass, format!("{} member trees assessed", member_aucs.len()));
        } else {
            b.record(
                "ensemble_members",
                Status::Fail,
                format!("{} of {} member trees cross the attack thresholds", unsafe_members.len(), member_aucs.len()),
            );
        }
    }

    let deny = constraints_failed || !tamper_text.is_empty() || !b.reasons.is_empty();
    let (recommendation, reason) = if deny {
        let mut reason = details.clone();
        reason.push_str(&tamper_text);
        for r in &b.reasons {
            reason.push_str(r);
        }
        (DENY.to_string(), Some(reason))
    } else {
        (approve_sentence(req.model_file), None)
    };
    let report = ReleaseReport {
        researcher: req.researcher.to_string(),
        model_type: model.kind.class_name().to_string(),
        model_save_file: req.model_file.to_string(),
        details,
        recommendation,
        reason,
        checks: ReleaseChecks {
            seed: req.seed,
            checker_seed,
            prior: req.prior,
            thresholds: th.clone(),
            outcomes: b.outcomes,
            k_anonymity,
            model_bytes,
            data_bytes,
            embedded_training_rows: embedded,
            holdout_auc,
            worst_case_mia: worst,
            lira,
            aia,
            member_tree_mia_auc: member_aucs,
            released_digest: released.internals_digest(),
        },
    };
    Ok(ReleaseOutcome {
        report,
        released_model,
    })
}
