//! `tresafe`: output checking for trained classifiers leaving a trusted
//! research environment.
//!
//! Every subcommand reads its inputs from files and writes its results to
//! files. Exit codes: 0 success or approval, 1 usage error, 2 release denied
//! or check failed, 3 unreadable or invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use tresafe::attacks::{
    attribute_risk_ratio, lira_mia, salem_mia, worst_case_mia, AiaAttributeReport, AiaSettings, MiaReport, Scenario,
};
use tresafe::dataset::{
    load_dataset, parse_data_dictionary, reserve_holdout, split_three_way, synthesize_marginals, write_dataset, Dataset,
};
use tresafe::harness::{
    compare_scenarios, fit_vulnerability_predictor, read_rows, risk_generalization, run_grid, SweepConfig,
};
use tresafe::models::{self, ModelSpec, TrainedModel};
use tresafe::safemodel::{check_params, parse_rules, request_release, snapshot, write_report, Snapshot, Thresholds};

#[derive(Parser)]
#[command(name = "tresafe", version, about = "Disclosure checks for trained classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Reserve a holdout of whole individuals and cut three-way splits.
    Split(SplitArgs),
    /// Fit a model from a spec file and record its fit-time snapshot.
    Train(TrainArgs),
    /// Check a model spec against a rules file.
    CheckParams(CheckArgs),
    /// Run one attack scenario against a model.
    Attack(AttackArgs),
    /// Run the full release battery and write the release report.
    Release(ReleaseArgs),
    /// Run a hyperparameter sweep and write its archive.
    Sweep(SweepArgs),
    /// Compare two attack scenarios across a sweep archive.
    Compare(CompareArgs),
    /// Fit the vulnerability meta-model on a sweep archive.
    PredictVuln(PredictArgs),
}

#[derive(Args)]
struct DataArgs {
    /// Data dictionary (JSON).
    #[arg(long)]
    dict: PathBuf,
}

#[derive(Args)]
struct SplitArgs {
    /// Full dataset (CSV).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    data_args: DataArgs,
    #[arg(long, default_value_t = 0.2)]
    holdout_fraction: f64,
    #[arg(long, default_value_t = 5)]
    repeats: u8,
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// Model spec (JSON with kind and params).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[command(flatten)]
    data_args: DataArgs,
    #[arg(long)]
    seed: u64,
    /// Model file to write (.json).
    #[arg(long)]
    out: PathBuf,
    /// Snapshot file; defaults to the model path with a .snapshot.json suffix.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    /// Timestamp recorded in the snapshot.
    #[arg(long)]
    timestamp: Option<String>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    rules: PathBuf,
    /// Model spec (JSON with kind and params).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    #[command(flatten)]
    data_args: DataArgs,
    /// worst_case, salem1, salem_synth, salem2, lira or aia.
    #[arg(long)]
    scenario: String,
    /// Shadow data (CSV) for salem1 and salem2.
    #[arg(long)]
    shadow: Option<PathBuf>,
    /// Dictionary of the shadow data when it differs from --dict.
    #[arg(long)]
    shadow_dict: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    n_shadow: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReleaseArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    rules: PathBuf,
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    holdout: PathBuf,
    #[command(flatten)]
    data_args: DataArgs,
    /// Fit-time snapshot; defaults to the model path with a .snapshot.json suffix.
    #[arg(long)]
    snapshot: Option<PathBuf>,
    #[arg(long)]
    researcher: String,
    #[arg(long)]
    seed: u64,
    /// Release report to write.
    #[arg(long)]
    out: PathBuf,
    /// Attack thresholds (JSON); defaults apply to omitted fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    claimed_auc: Option<f64>,
    /// Prior membership probability for attacker-probability figures.
    #[arg(long, default_value_t = 0.5)]
    prior: f64,
    /// Also attack each member of an ensemble.
    #[arg(long)]
    white_box: bool,
    #[arg(long, default_value_t = 16)]
    n_shadow: usize,
    /// Where a refitted model is written; defaults to the report path with a
    /// .model.json suffix.
    #[arg(long)]
    released_model: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Master seed; replaces the one in the config.
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "archive")]
    name: String,
}

#[derive(Args)]
struct CompareArgs {
    /// Sweep archive (CSV).
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value = "AUC")]
    metric: String,
    #[arg(long, default_value = "worst_case")]
    baseline: String,
    /// Scenario compared against the baseline.
    #[arg(long, default_value = "salem1")]
    scenario: String,
    #[arg(long, default_value_t = 0.6)]
    threshold: f64,
}

#[derive(Args)]
struct PredictArgs {
    /// Sweep archive (CSV).
    #[arg(long)]
    archive: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Problems with how the tool was invoked rather than with its inputs.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

enum Outcome {
    Done,
    /// Written output records a denial or a failed check.
    Denied,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(Outcome::Done) => ExitCode::SUCCESS,
        Ok(Outcome::Denied) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn run(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Split(a) => split(a),
        Command::Train(a) => train(a),
        Command::CheckParams(a) => check(a),
        Command::Attack(a) => attack(a),
        Command::Release(a) => release(a),
        Command::Sweep(a) => sweep(a),
        Command::Compare(a) => compare(a),
        Command::PredictVuln(a) => predict(a),
    }
}

fn read(path: &Path) -> anyhow::Result<Vec<u8>> {
    std::fs::read(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write(path, &bytes)
}

fn load_data(csv: &Path, dict: &Path) -> anyhow::Result<Dataset> {
    let dictionary = parse_data_dictionary(&read(dict)?).with_context(|| format!("dictionary {}", dict.display()))?;
    load_dataset(&read(csv)?, &dictionary).with_context(|| format!("dataset {}", csv.display()))
}

fn load_spec(path: &Path) -> anyhow::Result<ModelSpec> {
    let spec: ModelSpec = serde_json::from_slice(&read(path)?)
        .map_err(|e| tresafe::Error::Spec(e.to_string()))
        .with_context(|| format!("model spec {}", path.display()))?;
    spec.check_keys()?;
    Ok(spec)
}

/// Model files are accepted only as the canonical JSON envelope.
fn load_model(path: &Path) -> anyhow::Result<(Vec<u8>, TrainedModel)> {
    if path.extension().and_then(|e| e.to_str()) != Some("json") {
        return Err(tresafe::Error::Format(format!("{}: model files must be .json envelopes", path.display())).into());
    }
    let bytes = read(path)?;
    let model = TrainedModel::from_json_bytes(&bytes).with_context(|| format!("model {}", path.display()))?;
    Ok((bytes, model))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

fn split(a: SplitArgs) -> anyhow::Result<Outcome> {
    let ds = load_data(&a.data, &a.data_args.dict)?;
    if a.repeats == 0 || a.repeats > 5 {
        bail!(UsageError(format!("--repeats must be in 1..=5, got {}", a.repeats)));
    }
    let part = reserve_holdout(&ds, a.holdout_fraction, a.seed)?;
    let research = ds.subset(&part.research_indices)?;
    let holdout = ds.subset(&part.holdout_indices)?;
    let research_rows: Vec<usize> = (0..research.n_rows()).collect();
    let splits = (0..a.repeats)
        .map(|r| split_three_way(&research_rows, r, a.seed))
        .collect::<Result<Vec<_>, _>>()?;
    write(&a.out.join("research.csv"), &write_dataset(&research))?;
    write(&a.out.join("holdout.csv"), &write_dataset(&holdout))?;
    write_json(&a.out.join("holdout.json"), &part)?;
    write_json(&a.out.join("splits.json"), &splits)?;
    Ok(Outcome::Done)
}

fn train(a: TrainArgs) -> anyhow::Result<Outcome> {
    let mut spec = load_spec(&a.config)?;
    spec.seed = a.seed;
    let data = load_data(&a.train, &a.data_args.dict)?;
    let model = models::fit(&spec, &data)?;
    if a.out.extension().and_then(|e| e.to_str()) != Some("json") {
        bail!(UsageError("--out must name a .json model file".into()));
    }
    let snap = snapshot(&model, Some(&data), a.timestamp);
    write(&a.out, &model.to_json_bytes())?;
    write_json(&a.snapshot.unwrap_or_else(|| with_suffix(&a.out, "snapshot.json")), &snap)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct CheckReport {
    kind: String,
    passed: bool,
    details: String,
    violations: Vec<tresafe::safemodel::Violation>,
    adjusted_params: tresafe::models::ParamMap,
    warnings: Vec<String>,
}

fn check(a: CheckArgs) -> anyhow::Result<Outcome> {
    let rules = parse_rules(&read(&a.rules)?).with_context(|| format!("rules {}", a.rules.display()))?;
    let spec = load_spec(&a.config)?;
    let result = check_params(spec.kind, &spec.resolved_params()?, &rules);
    let passed = result.passed();
    write_json(
        &a.out,
        &CheckReport {
            kind: spec.kind.class_name().into(),
            passed,
            details: result.details(),
            violations: result.violations,
            adjusted_params: result.adjusted_params,
            warnings: result.warnings,
        },
    )?;
    Ok(if passed { Outcome::Done } else { Outcome::Denied })
}

fn attack(a: AttackArgs) -> anyhow::Result<Outcome> {
    let (_, model) = load_model(&a.model)?;
    let train = load_data(&a.train, &a.data_args.dict)?;
    let holdout = load_data(&a.holdout, &a.data_args.dict)?;
    if a.scenario == "aia" {
        let reports = train
            .dictionary()
            .features
            .iter()
            .filter_map(|f| match attribute_risk_ratio(&model, &train, &holdout, &AiaSettings::new(&f.name)) {
                Err(tresafe::Error::Degenerate(_)) => None,
                other => Some(other),
            })
            .collect::<Result<Vec<AiaAttributeReport>, _>>()?;
        write_json(&a.out, &reports)?;
        return Ok(Outcome::Done);
    }
    let scenario = Scenario::parse(&a.scenario).map_err(|e| UsageError(e.to_string()))?;
    let spec = ModelSpec::new(model.kind, model.params.clone(), model.fit_meta.seed);
    let shadow = |what: &str| -> anyhow::Result<Dataset> {
        let path = a.shadow.as_ref().ok_or_else(|| UsageError(format!("{what} needs --shadow")))?;
        load_data(path, a.shadow_dict.as_ref().unwrap_or(&a.data_args.dict))
    };
    let report: MiaReport = match scenario {
        Scenario::WorstCase => worst_case_mia(&model, &train, &holdout, a.seed)?,
        Scenario::Salem1 | Scenario::Salem2 => {
            salem_mia(scenario, &spec, &model, &shadow(scenario.as_str())?, &train, &holdout, a.seed)?
        }
        Scenario::SalemSynth => {
            let synth = synthesize_marginals(&train, train.n_rows(), tresafe::seed::derive_seed(a.seed, 7))?;
            salem_mia(scenario, &spec, &model, &synth, &train, &holdout, a.seed)?
        }
        Scenario::Lira => lira_mia(&spec, &model, &train, &holdout, a.n_shadow, a.seed)?,
    };
    write_json(&a.out, &report)?;
    Ok(Outcome::Done)
}

fn release(a: ReleaseArgs) -> anyhow::Result<Outcome> {
    let (bytes, _) = load_model(&a.model)?;
    let rules = parse_rules(&read(&a.rules)?).with_context(|| format!("rules {}", a.rules.display()))?;
    let snap_path = a.snapshot.clone().unwrap_or_else(|| with_suffix(&a.model, "snapshot.json"));
    let snap: Snapshot = serde_json::from_slice(&read(&snap_path)?)
        .map_err(|e| tresafe::Error::Format(e.to_string()))
        .with_context(|| format!("snapshot {}", snap_path.display()))?;
    let train = load_data(&a.train, &a.data_args.dict)?;
    let holdout = load_data(&a.holdout, &a.data_args.dict)?;
    let thresholds: Thresholds = match &a.config {
        Some(p) => serde_json::from_slice(&read(p)?)
            .map_err(|e| tresafe::Error::Config(e.to_string()))
            .with_context(|| format!("thresholds {}", p.display()))?,
        None => Thresholds::default(),
    };
    let model_file = a.model.to_string_lossy().into_owned();
    let outcome = request_release(&tresafe::safemodel::ReleaseRequest {
        model_bytes: &bytes,
        model_file: &model_file,
        snapshot: &snap,
        rules: &rules,
        train: &train,
        holdout: Some(&holdout),
        researcher: &a.researcher,
        claimed_auc: a.claimed_auc,
        pipeline: None,
        prior: a.prior,
        seed: a.seed,
        thresholds,
        white_box: a.white_box,
        n_shadow: a.n_shadow,
    })?;
    write(&a.out, &write_report(&outcome.report))?;
    if let Some(m) = &outcome.released_model {
        let path = a.released_model.clone().unwrap_or_else(|| with_suffix(&a.out, "model.json"));
        write(&path, &m.to_json_bytes())?;
    }
    Ok(if outcome.report.approved() { Outcome::Done } else { Outcome::Denied })
}

fn sweep(a: SweepArgs) -> anyhow::Result<Outcome> {
    let mut config = SweepConfig::load(&a.config).with_context(|| format!("sweep config {}", a.config.display()))?;
    config.master_seed = a.seed;
    let archive = run_grid(&config)?;
    archive.write(&a.out, &a.name)?;
    Ok(Outcome::Done)
}

#[derive(Serialize)]
struct CompareReport {
    comparison: tresafe::harness::ScenarioComparison,
    generalization: Vec<tresafe::harness::GeneralizationRow>,
}

fn compare(a: CompareArgs) -> anyhow::Result<Outcome> {
    let rows = read_rows(&read(&a.archive)?).with_context(|| format!("archive {}", a.archive.display()))?;
    let baseline = Scenario::parse(&a.baseline).map_err(|e| UsageError(e.to_string()))?;
    let other = Scenario::parse(&a.scenario).map_err(|e| UsageError(e.to_string()))?;
    if !tresafe::harness::METRIC_COLUMNS.contains(&a.metric.as_str()) {
        bail!(UsageError(format!("unknown metric column '{}'", a.metric)));
    }
    write_json(
        &a.out,
        &CompareReport {
            comparison: compare_scenarios(&rows, &a.metric, baseline, other, a.threshold),
            generalization: risk_generalization(&rows, &[a.metric.as_str()]),
        },
    )?;
    Ok(Outcome::Done)
}

fn predict(a: PredictArgs) -> anyhow::Result<Outcome> {
    let rows = read_rows(&read(&a.archive)?).with_context(|| format!("archive {}", a.archive.display()))?;
    let predictor = fit_vulnerability_predictor(&rows, a.seed)?;
    write_json(&a.out, &predictor)?;
    Ok(Outcome::Done)
}
