use std::path::PathBuf;

use thiserror::Error;

/// Exit code for a successful run.
pub const EXIT_OK: i32 = 0;
/// Exit code when the configuration is rejected before any computation.
pub const EXIT_VALIDATION: i32 = 2;
/// Exit code for errors raised while an experiment runs.
pub const EXIT_RUNTIME: i32 = 3;
/// Exit code when a verification fails (chain violation or oracle mismatch).
pub const EXIT_FALSIFIED: i32 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("could not parse configuration: {0}")]
    Parse(String),
    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Validation(Vec<String>),
    #[error("{stage}: {message}")]
    Runtime {
        stage: &'static str,
        message: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("series {0:?} has fewer than two points")]
    EmptySeries(String),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Parse(_) | HarnessError::Validation(_) => EXIT_VALIDATION,
            _ => EXIT_RUNTIME,
        }
    }

    pub(crate) fn runtime(stage: &'static str, err: impl std::fmt::Display) -> Self {
        HarnessError::Runtime {
            stage,
            message: err.to_string(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::runtime("csv output", e)
    }
}
