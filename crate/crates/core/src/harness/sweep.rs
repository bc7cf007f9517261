use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attacks::{attribute_risk_ratio, lira_mia, salem_mia, worst_case_mia, AiaSettings, Scenario};
use crate::dataset::generators::{generate, Regime, SyntheticSpec};
use crate::dataset::{self, split_three_way, synthesize_marginals, Dataset};
use crate::error::{Error, Result};
use crate::metrics::{attacker_probability, macro_auc, MetricSet};
use crate::models::{self, ModelKind, ModelSpec, ParamMap, ParamValue, TrainedModel};
use crate::seed::derive_seed;

use super::{flag_vulnerable, VulnerabilityThresholds};

pub const QUALITY_GATE: f64 = 0.75;
pub const MAX_REPEATS: usize = 5;

/// Inclusive gate on target-model quality: attacks are only worth running on
/// models a researcher would actually want to release.
pub fn target_quality_gate(auc: f64, tpr: f64, tnr: f64) -> bool {
    auc >= QUALITY_GATE && tpr >= QUALITY_GATE && tnr >= QUALITY_GATE
}

fn io_error(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn read(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| io_error(path, e))
}

/// Prefixes an error with the dataset it came from, keeping its class.
fn annotate(e: Error, id: &str) -> Error {
    match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("dataset {id}: {io}"))),
        other => Error::Data(format!("dataset {id}: {other}")),
    }
}

/// Where a sweep gets one of its datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Csv {
        id: String,
        data: PathBuf,
        dict: PathBuf,
        /// Id of another configured dataset to use as unrelated shadow data.
        #[serde(default)]
        unrelated: Option<String>,
    },
    Synthetic {
        id: String,
        regime: Regime,
        n_rows: usize,
        #[serde(default = "default_numeric")]
        n_numeric: usize,
        #[serde(default)]
        label_noise: Option<f64>,
        seed: u64,
        #[serde(default)]
        unrelated: Option<String>,
    },
}

fn default_numeric() -> usize {
    4
}

impl DatasetSource {
    pub fn id(&self) -> &str {
        match self {
            DatasetSource::Csv { id, .. } | DatasetSource::Synthetic { id, .. } => id,
        }
    }

    fn unrelated(&self) -> Option<&str> {
        match self {
            DatasetSource::Csv { unrelated, .. } | DatasetSource::Synthetic { unrelated, .. } => unrelated.as_deref(),
        }
    }

    fn load(&self) -> Result<Dataset> {
        match self {
            DatasetSource::Csv { id, data, dict, .. } => {
                let dict_bytes = read(dict).map_err(|e| annotate(e, id))?;
                let csv_bytes = read(data).map_err(|e| annotate(e, id))?;
                let dictionary = dataset::parse_data_dictionary(&dict_bytes)?;
                dataset::load_dataset(&csv_bytes, &dictionary)
            }
            DatasetSource::Synthetic { .. } => generate(&self.synthetic_spec(None)),
        }
    }

    fn synthetic_spec(&self, regime_override: Option<Regime>) -> SyntheticSpec {
        match self {
            DatasetSource::Synthetic { regime, n_rows, n_numeric, label_noise, seed, .. } => SyntheticSpec {
                regime: regime_override.unwrap_or(*regime),
                n_rows: *n_rows,
                n_numeric: *n_numeric,
                label_noise: if regime_override.is_some() { None } else { *label_noise },
                seed: if regime_override.is_some() { derive_seed(*seed, 0x5A1E) } else { *seed },
            },
            DatasetSource::Csv { .. } => unreachable!("csv sources have no generator"),
        }
    }

    /// The explicitly named unrelated dataset, or for synthetic sources a
    /// generated dataset from the unrelated regime with the same layout.
    fn load_unrelated(&self, loaded: &BTreeMap<String, Dataset>) -> Option<Result<Dataset>> {
        match (self.unrelated(), self) {
            (Some(other), _) => Some(
                loaded
                    .get(other)
                    .cloned()
                    .ok_or_else(|| Error::Config(format!("unrelated dataset '{other}' is not configured"))),
            ),
            (None, DatasetSource::Synthetic { .. }) => Some(generate(&self.synthetic_spec(Some(Regime::Unrelated)))),
            (None, DatasetSource::Csv { .. }) => None,
        }
    }

    fn resolve(&mut self, base: &Path) {
        if let DatasetSource::Csv { data, dict, .. } = self {
            if data.is_relative() {
                *data = base.join(&*data);
            }
            if dict.is_relative() {
                *dict = base.join(&*dict);
            }
        }
    }
}

/// Values to try for each hyperparameter of one model kind; the grid is
/// their cartesian product. An empty map means a single default point.
pub type ParamGrid = BTreeMap<String, Vec<ParamValue>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub datasets: Vec<DatasetSource>,
    pub grids: BTreeMap<ModelKind, ParamGrid>,
    pub scenarios: Vec<Scenario>,
    #[serde(default = "default_repeats")]
    pub n_repeats: usize,
    pub master_seed: u64,
    /// Prior probability of membership for the attacker-probability column.
    #[serde(default = "default_prior")]
    pub prior: f64,
    #[serde(default)]
    pub thresholds: VulnerabilityThresholds,
    #[serde(default = "default_true")]
    pub apply_quality_gate: bool,
    /// Run attribute inference on every attribute of each gated cell.
    #[serde(default)]
    pub aia: bool,
    #[serde(default = "default_shadows")]
    pub n_shadow: usize,
}

fn default_repeats() -> usize {
    MAX_REPEATS
}

fn default_prior() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

fn default_shadows() -> usize {
    8
}

impl SweepConfig {
    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let config: SweepConfig = serde_json::from_slice(bytes).map_err(dataset::json_error)?;
        config.validate()?;
        Ok(config)
    }

    /// Reads a config file; relative dataset paths are taken from the
    /// config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read(path)?;
        let mut config = Self::from_json(&bytes)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for d in &mut config.datasets {
            d.resolve(base);
        }
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets.is_empty() {
            return Err(Error::Config("no datasets configured".into()));
        }
        let ids: BTreeSet<&str> = self.datasets.iter().map(|d| d.id()).collect();
        if ids.len() != self.datasets.len() {
            return Err(Error::Config("dataset ids must be unique".into()));
        }
        if self.grids.is_empty() {
            return Err(Error::Config("no model grids configured".into()));
        }
        for (kind, grid) in &self.grids {
            for (key, values) in grid {
                if values.is_empty() {
                    return Err(Error::Config(format!("{kind} grid for {key} has no values")));
                }
            }
            ModelSpec::new(*kind, grid.iter().map(|(k, v)| (k.clone(), v[0].clone())).collect(), 0).check_keys()?;
        }
        if self.scenarios.is_empty() {
            return Err(Error::Config("no scenarios configured".into()));
        }
        if !(1..=MAX_REPEATS).contains(&self.n_repeats) {
            return Err(Error::Config(format!("n_repeats must be in 1..={MAX_REPEATS}, got {}", self.n_repeats)));
        }
        if !(self.prior > 0.0 && self.prior <= 1.0) {
            return Err(Error::Config(format!("prior must be in (0, 1], got {}", self.prior)));
        }
        if self.scenarios.contains(&Scenario::Lira) && self.n_shadow < 4 {
            return Err(Error::Config(format!("n_shadow must be at least 4, got {}", self.n_shadow)));
        }
        Ok(())
    }

    /// Every (dataset, kind, param point, repeat) in index order.
    pub fn cells(&self) -> Vec<Cell> {
        let mut out = Vec::new();
        for d in &self.datasets {
            for (kind, grid) in &self.grids {
                for params in cartesian(grid) {
                    for repeat_id in 0..self.n_repeats {
                        out.push(Cell {
                            index: out.len(),
                            dataset: d.id().to_string(),
                            kind: *kind,
                            params: params.clone(),
                            repeat_id,
                            seed: derive_seed(self.master_seed, out.len() as u64),
                        });
                    }
                }
            }
        }
        out
    }
}

fn cartesian(grid: &ParamGrid) -> Vec<ParamMap> {
    let mut points = vec![ParamMap::new()];
    for (key, values) in grid {
        points = points
            .iter()
            .flat_map(|p| values.iter().map(move |v| p.clone().with(key, v.clone())))
            .collect();
    }
    points
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub index: usize,
    pub dataset: String,
    pub kind: ModelKind,
    pub params: ParamMap,
    pub repeat_id: usize,
    pub seed: u64,
}

/// One (cell, scenario) result. Attack columns are empty when the target
/// failed the quality gate or the cell failed.
#[allow(non_snake_case)]
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveRow {
    pub cell_index: usize,
    pub dataset: String,
    pub kind: ModelKind,
    /// Grid point as compact JSON.
    pub params: String,
    pub repeat_id: usize,
    pub cell_seed: u64,
    pub scenario: Scenario,
    pub target_auc: Option<f64>,
    pub target_tpr: Option<f64>,
    pub target_tnr: Option<f64>,
    pub quality_gate_pass: Option<bool>,
    pub AUC: Option<f64>,
    pub AUC_null_lo: Option<f64>,
    pub AUC_null_hi: Option<f64>,
    pub TPR: Option<f64>,
    pub FPR: Option<f64>,
    pub FAR: Option<f64>,
    pub TNR: Option<f64>,
    pub PPV: Option<f64>,
    pub NPV: Option<f64>,
    pub FNR: Option<f64>,
    pub ACC: Option<f64>,
    pub F1: Option<f64>,
    pub Advantage: Option<f64>,
    pub FDIF: Option<f64>,
    pub PDIF: Option<f64>,
    #[serde(rename = "tpr_at_fpr_0.01")]
    pub tpr_at_fpr_001: Option<f64>,
    #[serde(rename = "tpr_at_fpr_0.05")]
    pub tpr_at_fpr_005: Option<f64>,
    #[serde(rename = "tpr_at_fpr_0.1")]
    pub tpr_at_fpr_01: Option<f64>,
    pub attacker_probability: Option<f64>,
    pub attack_seed: Option<u64>,
    pub max_ARR: Option<f64>,
    pub vulnerable_mia: Option<bool>,
    pub vulnerable_aia: Option<bool>,
    /// Why a row carries no attack results; empty on success.
    pub failure: String,
}

impl ArchiveRow {
    pub fn blank(cell: &Cell, scenario: Scenario) -> Self {
        ArchiveRow {
            cell_index: cell.index,
            dataset: cell.dataset.clone(),
            kind: cell.kind,
            params: serde_json::to_string(&cell.params).expect("param maps serialize"),
            repeat_id: cell.repeat_id,
            cell_seed: cell.seed,
            scenario,
            target_auc: None,
            target_tpr: None,
            target_tnr: None,
            quality_gate_pass: None,
            AUC: None,
            AUC_null_lo: None,
            AUC_null_hi: None,
            TPR: None,
            FPR: None,
            FAR: None,
            TNR: None,
            PPV: None,
            NPV: None,
            FNR: None,
            ACC: None,
            F1: None,
            Advantage: None,
            FDIF: None,
            PDIF: None,
            tpr_at_fpr_001: None,
            tpr_at_fpr_005: None,
            tpr_at_fpr_01: None,
            attacker_probability: None,
            attack_seed: None,
            max_ARR: None,
            vulnerable_mia: None,
            vulnerable_aia: None,
            failure: String::new(),
        }
    }

    fn fill(&mut self, m: &MetricSet, prior: f64) {
        let r = &m.rates;
        self.AUC = Some(m.AUC);
        self.AUC_null_lo = Some(m.AUC_null_lo);
        self.AUC_null_hi = Some(m.AUC_null_hi);
        (self.TPR, self.FPR, self.FAR, self.TNR) = (r.TPR, r.FPR, r.FAR, r.TNR);
        (self.PPV, self.NPV, self.FNR, self.ACC) = (r.PPV, r.NPV, r.FNR, r.ACC);
        (self.F1, self.Advantage) = (r.F1, r.Advantage);
        self.FDIF = Some(m.FDIF);
        self.PDIF = Some(m.PDIF);
        self.tpr_at_fpr_001 = m.tpr_at_fpr.get("0.01").copied();
        self.tpr_at_fpr_005 = m.tpr_at_fpr.get("0.05").copied();
        self.tpr_at_fpr_01 = m.tpr_at_fpr.get("0.1").copied();
        self.attacker_probability = match (r.TPR, r.FPR) {
            (Some(t), Some(f)) => attacker_probability(prior, t, f).ok(),
            _ => None,
        };
    }

    pub fn param_map(&self) -> Result<ParamMap> {
        serde_json::from_str(&self.params).map_err(|e| Error::Format(format!("params column: {e}")))
    }

    /// Looks up a numeric column by its header name.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "target_auc" => self.target_auc,
            "target_tpr" => self.target_tpr,
            "target_tnr" => self.target_tnr,
            "AUC" => self.AUC,
            "AUC_null_lo" => self.AUC_null_lo,
            "AUC_null_hi" => self.AUC_null_hi,
            "TPR" => self.TPR,
            "FPR" => self.FPR,
            "FAR" => self.FAR,
            "TNR" => self.TNR,
            "PPV" => self.PPV,
            "NPV" => self.NPV,
            "FNR" => self.FNR,
            "ACC" => self.ACC,
            "F1" => self.F1,
            "Advantage" => self.Advantage,
            "FDIF" => self.FDIF,
            "PDIF" => self.PDIF,
            "tpr_at_fpr_0.01" => self.tpr_at_fpr_001,
            "tpr_at_fpr_0.05" => self.tpr_at_fpr_005,
            "tpr_at_fpr_0.1" => self.tpr_at_fpr_01,
            "attacker_probability" => self.attacker_probability,
            "max_ARR" => self.max_ARR,
            _ => None,
        }
    }
}

pub const METRIC_COLUMNS: [&str; 23] = [
    "target_auc",
    "target_tpr",
    "target_tnr",
    "AUC",
    "AUC_null_lo",
    "AUC_null_hi",
    "TPR",
    "FPR",
    "FAR",
    "TNR",
    "PPV",
    "NPV",
    "FNR",
    "ACC",
    "F1",
    "Advantage",
    "FDIF",
    "PDIF",
    "tpr_at_fpr_0.01",
    "tpr_at_fpr_0.05",
    "tpr_at_fpr_0.1",
    "attacker_probability",
    "max_ARR",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ResultsArchive {
    pub config: SweepConfig,
    pub rows: Vec<ArchiveRow>,
}

/// Header sidecar written next to the archive CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveMeta {
    pub toolkit_version: String,
    pub config: SweepConfig,
    pub thresholds: VulnerabilityThresholds,
    pub n_cells: usize,
    pub n_rows: usize,
    pub pdif_test: String,
    pub quality_gate: f64,
}

impl ResultsArchive {
    pub fn to_csv(&self) -> Result<Vec<u8>> {
        write_rows(&self.rows)
    }

    pub fn meta(&self) -> ArchiveMeta {
        ArchiveMeta {
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
            config: self.config.clone(),
            thresholds: self.config.thresholds.clone(),
            n_cells: self.rows.iter().map(|r| r.cell_index).collect::<BTreeSet<_>>().len(),
            n_rows: self.rows.len(),
            pdif_test: "one-sided label-permutation test of FDIF, p = (count + 1) / (n_perm + 1)".into(),
            quality_gate: QUALITY_GATE,
        }
    }

    /// Writes `<name>.csv` and `<name>.meta.json` into `dir`.
    pub fn write(&self, dir: &Path, name: &str) -> Result<(PathBuf, PathBuf)> {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let csv_path = dir.join(format!("{name}.csv"));
        let meta_path = dir.join(format!("{name}.meta.json"));
        let mut meta = serde_json::to_vec_pretty(&self.meta()).expect("archive meta serializes");
        meta.push(b'\n');
        std::fs::write(&csv_path, self.to_csv()?).map_err(|e| io_error(&csv_path, e))?;
        std::fs::write(&meta_path, meta).map_err(|e| io_error(&meta_path, e))?;
        Ok((csv_path, meta_path))
    }
}

pub fn write_rows(rows: &[ArchiveRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Format(format!("archive row: {e}")))?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn read_rows(bytes: &[u8]) -> Result<Vec<ArchiveRow>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .enumerate()
        .map(|(i, r)| r.map_err(|e| Error::Format(format!("archive row {}: {e}", i + 1))))
        .collect()
}

struct Loaded {
    data: Dataset,
    unrelated: Option<std::result::Result<Dataset, String>>,
}

/// Runs every cell of the sweep. Cells run in parallel; each derives all of
/// its randomness from its own seed and rows are merged in cell order, so
/// the archive does not depend on scheduling.
pub fn run_grid(config: &SweepConfig) -> Result<ResultsArchive> {
    config.validate()?;
    let mut raw = BTreeMap::new();
    for d in &config.datasets {
        let ds = d.load().map_err(|e| annotate(e, d.id()))?;
        raw.insert(d.id().to_string(), ds);
    }
    let loaded: BTreeMap<String, Loaded> = config
        .datasets
        .iter()
        .map(|d| {
            let data = raw[d.id()].clone();
            let needs_unrelated = config.scenarios.contains(&Scenario::Salem2);
            let unrelated = if needs_unrelated {
                d.load_unrelated(&raw).map(|r| r.map_err(|e| e.to_string()))
            } else {
                None
            };
            (d.id().to_string(), Loaded { data, unrelated })
        })
        .collect();
    let cells = config.cells();
    let rows: Vec<Vec<ArchiveRow>> = cells.par_iter().map(|c| run_cell(config, c, &loaded[&c.dataset])).collect();
    Ok(ResultsArchive {
        config: config.clone(),
        rows: rows.into_iter().flatten().collect(),
    })
}

struct Target {
    spec: ModelSpec,
    model: TrainedModel,
    train: Dataset,
    shadow: Dataset,
    test: Dataset,
    auc: f64,
    tpr: f64,
    tnr: f64,
}

fn fit_target(cell: &Cell, data: &Dataset) -> Result<Target> {
    let all: Vec<usize> = (0..data.n_rows()).collect();
    let split = split_three_way(&all, cell.repeat_id as u8, cell.seed)?;
    let train = data.subset(&split.train)?;
    let shadow = data.subset(&split.shadow)?;
    let test = data.subset(&split.test)?;
    let spec = ModelSpec::new(cell.kind, cell.params.clone(), derive_seed(cell.seed, 1));
    let model = models::fit(&spec, &train)?;
    let proba = model.predict_proba(test.matrix())?;
    let auc = macro_auc(&proba, test.labels())?;
    let (tpr, tnr) = recall_and_specificity(&proba, test.labels());
    Ok(Target { spec, model, train, shadow, test, auc, tpr, tnr })
}

/// Class-1 recall and specificity for binary targets; macro one-vs-rest
/// averages otherwise. Classes missing from `labels` are skipped.
fn recall_and_specificity(proba: &crate::matrix::Matrix, labels: &[usize]) -> (f64, f64) {
    let pred: Vec<usize> = (0..proba.rows()).map(|i| models::argmax(proba.row(i))).collect();
    let classes: Vec<usize> = if proba.cols() == 2 { vec![1] } else { (0..proba.cols()).collect() };
    let (mut tpr, mut tnr, mut used) = (0.0, 0.0, 0usize);
    for c in classes {
        let pos = labels.iter().filter(|&&l| l == c).count();
        let neg = labels.len() - pos;
        if pos == 0 || neg == 0 {
            continue;
        }
        let tp = labels.iter().zip(&pred).filter(|&(&l, &p)| l == c && p == c).count();
        let tn = labels.iter().zip(&pred).filter(|&(&l, &p)| l != c && p != c).count();
        tpr += tp as f64 / pos as f64;
        tnr += tn as f64 / neg as f64;
        used += 1;
    }
    if used == 0 {
        return (0.0, 0.0);
    }
    (tpr / used as f64, tnr / used as f64)
}

fn run_cell(config: &SweepConfig, cell: &Cell, data: &Loaded) -> Vec<ArchiveRow> {
    let mut rows: Vec<ArchiveRow> = config.scenarios.iter().map(|&s| ArchiveRow::blank(cell, s)).collect();
    let target = match fit_target(cell, &data.data) {
        Ok(t) => t,
        Err(e) => {
            for r in &mut rows {
                r.failure = format!("target: {e}");
            }
            return rows;
        }
    };
    let pass = target_quality_gate(target.auc, target.tpr, target.tnr);
    for r in &mut rows {
        r.target_auc = Some(target.auc);
        r.target_tpr = Some(target.tpr);
        r.target_tnr = Some(target.tnr);
        r.quality_gate_pass = Some(pass);
    }
    if config.apply_quality_gate && !pass {
        return rows;
    }

    let aia = config.aia.then(|| cell_aia(config, &target));
    for (k, (row, &scenario)) in rows.iter_mut().zip(&config.scenarios).enumerate() {
        let attack_seed = derive_seed(cell.seed, 10 + k as u64);
        row.attack_seed = Some(attack_seed);
        match run_scenario(config, scenario, &target, data, attack_seed) {
            Ok(m) => {
                row.fill(&m, config.prior);
                row.vulnerable_mia = flag_vulnerable(row, &config.thresholds);
            }
            Err(e) => row.failure = format!("{scenario}: {e}"),
        }
        if let Some(a) = &aia {
            match a {
                Ok((max_arr, vulnerable)) => {
                    row.max_ARR = *max_arr;
                    row.vulnerable_aia = Some(*vulnerable);
                }
                Err(e) if row.failure.is_empty() => row.failure = format!("aia: {e}"),
                Err(_) => {}
            }
        }
    }
    rows
}

fn run_scenario(config: &SweepConfig, scenario: Scenario, t: &Target, data: &Loaded, seed: u64) -> Result<MetricSet> {
    let report = match scenario {
        Scenario::WorstCase => worst_case_mia(&t.model, &t.train, &t.test, seed)?,
        Scenario::Salem1 => salem_mia(scenario, &t.spec, &t.model, &t.shadow, &t.train, &t.test, seed)?,
        Scenario::SalemSynth => {
            let synth = synthesize_marginals(&t.train, t.shadow.n_rows(), derive_seed(seed, 7))?;
            salem_mia(scenario, &t.spec, &t.model, &synth, &t.train, &t.test, seed)?
        }
        Scenario::Salem2 => {
            let unrelated = match &data.unrelated {
                Some(Ok(d)) => d,
                Some(Err(e)) => return Err(Error::Data(format!("unrelated dataset: {e}"))),
                None => return Err(Error::Config("no unrelated dataset configured".into())),
            };
            salem_mia(scenario, &t.spec, &t.model, unrelated, &t.train, &t.test, seed)?
        }
        Scenario::Lira => lira_mia(&t.spec, &t.model, &t.train, &t.test, config.n_shadow, seed)?,
    };
    Ok(report.metrics)
}

/// Largest defined attribute risk ratio over all attributes and whether any
/// attribute crosses the thresholds.
fn cell_aia(config: &SweepConfig, t: &Target) -> Result<(Option<f64>, bool)> {
    let th = &config.thresholds;
    let mut max_arr: Option<f64> = None;
    let mut vulnerable = false;
    for f in &t.train.dictionary().features {
        let r = match attribute_risk_ratio(&t.model, &t.train, &t.test, &AiaSettings::new(&f.name)) {
            Ok(r) => r,
            Err(Error::Degenerate(_)) => continue,
            Err(e) => return Err(e),
        };
        max_arr = Some(max_arr.map_or(r.ARR, |m| m.max(r.ARR)));
        vulnerable |= r.ARR > th.arr && r.at_risk_train_ids.len() >= th.arr_min_at_risk;
    }
    Ok((max_arr, vulnerable))
}
