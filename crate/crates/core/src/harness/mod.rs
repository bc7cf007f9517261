//! Seeded hyperparameter sweeps and the analyses run over their archives:
//! scenario comparison, cross-dataset risk spread, vulnerability flags and
//! a meta-model predicting vulnerability from hyperparameters.

mod analysis;
mod sweep;

pub use analysis::{
    compare_scenarios, fit_vulnerability_predictor, flag_vulnerable, meta_model_spec, risk_generalization,
    CellDifference, GeneralizationRow, MetaFeatures, Quadrants, ScenarioComparison, VulnerabilityPredictor,
    VulnerabilityThresholds, META_MIN_ROWS,
};
pub use sweep::{
    read_rows, run_grid, target_quality_gate, write_rows, ArchiveMeta, ArchiveRow, Cell, DatasetSource, ParamGrid,
    ResultsArchive, SweepConfig, MAX_REPEATS, METRIC_COLUMNS, QUALITY_GATE,
};
