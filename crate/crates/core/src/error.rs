use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single offending row reported by dataset validation.
#[derive(Debug, Clone, PartialEq)]
pub struct RowIssue {
    /// 1-based data row number (header excluded).
    pub row: usize,
    pub id: String,
    pub message: String,
}

impl std::fmt::Display for RowIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {} (id {}): {}", self.row, self.id, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("unknown {kind} level '{level}' for record {id}")]
    UnknownLevel {
        kind: &'static str,
        level: String,
        id: String,
    },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical failure at iteration {iteration}: {message}")]
    Numerical { iteration: usize, message: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dataset validation failed:\n{}", format_issues(.0))]
    Validation(Vec<RowIssue>),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn format_issues(issues: &[RowIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Validation-type failures map to exit status 1; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Validation(_)
                | Error::UnknownLevel { .. }
                | Error::Config(_)
                | Error::Format { .. }
                | Error::Csv(_)
                | Error::Dimension(_)
        )
    }
}
