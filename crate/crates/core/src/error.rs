use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column `{0}` not found in header")]
    MissingColumn(String),

    #[error("no rows left after excluding incomplete records ({dropped} dropped)")]
    NoRows { dropped: usize },

    #[error("row {row}: event value `{value}` is not one of 0, 1, true, false")]
    InvalidEvent { row: usize, value: String },

    #[error("row {row}: {message}")]
    InvalidRow { row: usize, message: String },

    #[error("invalid covariate `{name}`: {message}")]
    InvalidCovariate { name: String, message: String },

    #[error("duplicate covariate name `{0}`")]
    DuplicateCovariate(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("unknown covariate `{0}`")]
    UnknownCovariate(String),

    #[error("invalid case weights: {0}")]
    InvalidWeights(String),

    #[error("total case weight {total} is below the required {required}")]
    InsufficientWeight { total: f64, required: f64 },

    #[error("permutation p-values require integer case weights")]
    NonIntegerWeights,

    #[error("exact enumeration supports at most {max} observations, got {n}")]
    TooManyObservations { n: usize, max: usize },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("the response has no observed events")]
    NoEvents,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("categorical covariate `{name}` has {levels} levels; at most {max} are supported")]
    TooManyLevels { name: String, levels: usize, max: usize },

    #[error("missing value for covariate `{0}`")]
    MissingValue(String),

    #[error("level `{level}` is not a declared level of `{covariate}`")]
    UnseenLevel { covariate: String, level: String },

    #[error("split on `{0}` does not match the covariate type")]
    SplitMismatch(String),

    #[error("{name} must be positive, got {value}")]
    NonPositiveLab { name: &'static str, value: f64 },

    #[error("infeasible censoring target: {0}")]
    InfeasibleCensoring(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("malformed tree document: {0}")]
    MalformedDocument(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
