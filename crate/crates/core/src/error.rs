use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("format error: {0}")]
    Format(String),
    #[error("truncated input: {0}")]
    Truncation(String),
    #[error("invalid value: {0}")]
    Value(String),
    #[error("duplicate entry: {0}")]
    Duplicate(String),
    #[error("out of range: {0}")]
    Range(String),
    #[error("label kind error: {0}")]
    LabelKind(String),
    #[error("manifest does not cover the embedding table: {0}")]
    Coverage(String),
    #[error("bag {bag} carries conflicting {what}")]
    LabelConflict { bag: String, what: &'static str },
    #[error("all overlap areas are zero")]
    EmptyOverlap,
    #[error("infeasible split: {0}")]
    Infeasible(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate fold: {0}")]
    DegenerateFold(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty bag")]
    EmptyBag,
    #[error("training diverged at epoch {epoch}, step {step}")]
    Divergence { epoch: usize, step: usize },
    #[error("metric undefined: {0}")]
    Undefined(String),
    #[error("alignment error: {0}")]
    Alignment(String),
    #[error("group leakage between train and test: {0}")]
    Leakage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
