use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] hypcbm::Error),

    #[error(transparent)]
    Service(#[from] hypcbm_service::ServiceError),

    #[error("missing required setting `{0}` (pass --{flag} or set it in the config file)", flag = .0.replace('_', "-"))]
    Missing(&'static str),

    #[error("invalid config {path}: {reason}")]
    Config { path: PathBuf, reason: String },

    #[error("{0}")]
    Invalid(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(e) => e.kind(),
            CliError::Service(hypcbm_service::ServiceError::Model(e)) => e.kind(),
            CliError::Service(hypcbm_service::ServiceError::BundleMismatch { .. }) => "bundle_mismatch",
            CliError::Service(hypcbm_service::ServiceError::Bind { .. }) => "bind",
            CliError::Service(_) => "service",
            CliError::Missing(_) => "missing_setting",
            CliError::Config { .. } => "config",
            CliError::Invalid(_) => "invalid_argument",
            CliError::Io { .. } => "io",
        }
    }

    /// One JSON object on one line, for stderr.
    pub fn report_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Line {
            error: self.kind(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}
