use thiserror::Error;

/// Errors raised across the toolkit.
///
/// Each variant corresponds to one failure class an output checker needs to
/// tell apart; the CLI maps them onto exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("schema error: {0}")]
    Schema(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("label error: {0}")]
    Label(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("invalid model spec: {0}")]
    Spec(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("provenance error: {0}")]
    Provenance(String),
    #[error("unsupported model kind: {0}")]
    Kind(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("train/holdout leakage: {0}")]
    Leakage(String),
    #[error("degenerate attribute: {0}")]
    Degenerate(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("training error: {0}")]
    Training(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
