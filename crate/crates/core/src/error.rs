use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    Ingestion {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("infeasible at lambda = {lambda_hi} under margin eps = {eps:e}")]
    NotStabilizable { lambda_hi: f64, eps: f64 },

    #[error("closed loop not certified stable: infeasible at lambda = {lambda_hi} under margin eps = {eps:e}")]
    NotStable { lambda_hi: f64, eps: f64 },

    #[error("solver returned unknown at lambda = {lambda}: {reason}")]
    SolverUnknown { lambda: f64, reason: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
