use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("column '{0}' not found in header")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("degenerate basis: only {distinct} distinct covariate values (need at least 4)")]
    DegenerateBasis { distinct: usize },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("no respondents in sample")]
    NoRespondents,

    #[error("bootstrap replicate {replicate}: {attempts} consecutive draws without respondents")]
    BootstrapExhausted { replicate: usize, attempts: usize },

    #[error("invalid configuration:\n{}", .0.iter().map(|i| format!("  {i}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<ConfigIssue>),

    #[error("{failed} of {total} replicates failed (budget 1%); first failure: {first}")]
    ReplicateFailures {
        failed: usize,
        total: usize,
        first: String,
    },
}

/// One violated configuration constraint, keyed by the dotted config path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    pub key: String,
    pub message: String,
}

impl ConfigIssue {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            key: key.into(),
            message: message.into(),
        }
    }
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.key, self.message)
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
