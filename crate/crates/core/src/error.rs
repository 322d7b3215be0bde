use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{context}: parse error at line {line}, column {column}: {message}")]
    Parse {
        context: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("no path from {from:?} to {to:?}")]
    NoPath {
        from: crate::grid_world::CellPos,
        to: crate::grid_world::CellPos,
    },

    #[error("inconsistent constraint system: {0}")]
    Consistency(String),

    #[error("decoder did not converge after {iterations} iterations (equality residual {residual:e})")]
    SolverNonConvergence { iterations: usize, residual: f64 },

    #[error("template violation in template {template}: {message}")]
    Template { template: usize, message: String },

    #[error("missing result for framework {framework} in simulation {simulation}")]
    MissingFramework {
        framework: String,
        simulation: usize,
    },

    #[error("config error: {0}")]
    Config(String),

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
}
