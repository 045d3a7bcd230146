use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("header parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("corrupt payload in {path}: {message}")]
    Corruption { path: PathBuf, message: String },

    #[error("design error: {0}")]
    Design(String),

    #[error("scheduling error: need {required_s:.1} s but only {available_s:.1} s available")]
    Scheduling { required_s: f64, available_s: f64 },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.3e}, best a={a:.4}, b={b_mm:.4}, c={c_mm:.4})")]
    FitNonConvergence {
        iterations: usize,
        residual_norm: f64,
        a: f64,
        b_mm: f64,
        c_mm: f64,
    },

    #[error("degenerate statistic: {0}")]
    Degenerate(String),

    #[error("validation error for `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }
}
