use std::path::PathBuf;

use thiserror::Error;

pub const EXIT_INPUT: i32 = 1;
pub const EXIT_ESTIMATION: i32 = 2;
pub const EXIT_TOO_MANY_FAILURES: i32 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("config {path}: {source}")]
    Config {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Model(#[from] semiql::Error),
    #[error("serializing report: {0}")]
    Serialize(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Model(e) => model_exit_code(e),
            _ => EXIT_INPUT,
        }
    }
}

/// Solver and smoothing failures are estimation failures (exit 2); bad data,
/// bad settings and everything else are input errors (exit 1).
pub fn model_exit_code(e: &semiql::Error) -> i32 {
    use semiql::Error::*;
    match e {
        NoConvergence(_)
        | SingularJacobian(_)
        | BoundaryStall(_)
        | NoBracket { .. }
        | DegenerateWindow { .. }
        | AllTrimmed
        | SingularV { .. } => EXIT_ESTIMATION,
        TooManyFailures { .. } => EXIT_TOO_MANY_FAILURES,
        _ => EXIT_INPUT,
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
