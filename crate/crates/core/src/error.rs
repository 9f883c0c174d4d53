use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("point is off the hyperboloid: <x,x>_L = {inner}, expected {expected}")]
    OffManifold { inner: f64, expected: f64 },

    #[error("concept {0} has zero spatial norm; its cone is undefined")]
    ZeroNorm(usize),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("unknown concept id {0}")]
    UnknownConcept(usize),

    #[error("unknown concept name `{0}`")]
    UnknownConceptName(String),

    #[error("duplicate concept name `{0}`")]
    DuplicateName(String),

    #[error("corrupt file {path}: {reason}")]
    Corrupt { path: PathBuf, reason: String },

    #[error("{0}")]
    Degenerate(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownStrategy {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("dense matrix of {requested} elements exceeds the budget of {budget}")]
    MemoryBudget { requested: usize, budget: usize },

    #[error("spec infeasible: {0}")]
    Infeasible(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Stable snake_case tag for machine-readable error reports.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::OffManifold { .. } => "off_manifold",
            Error::ZeroNorm(_) => "zero_norm",
            Error::InvalidParameter { .. } => "invalid_parameter",
            Error::UnknownConcept(_) | Error::UnknownConceptName(_) => "unknown_concept",
            Error::DuplicateName(_) => "duplicate_name",
            Error::Corrupt { .. } => "corrupt_file",
            Error::Degenerate(_) => "degenerate",
            Error::UnknownStrategy { .. } => "unknown_strategy",
            Error::MemoryBudget { .. } => "memory_budget",
            Error::Infeasible(_) => "infeasible",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
