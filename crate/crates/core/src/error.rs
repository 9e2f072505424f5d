use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: parse error at row {row}: {message}")]
    Parse {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: alignment error at row {row}: {message}")]
    Alignment {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: schema error at row {row}: {message}")]
    Schema {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("{path}: conflicting events for {appliance} at steps {first} and {second}")]
    EventConflict {
        path: PathBuf,
        appliance: String,
        first: usize,
        second: usize,
    },

    #[error("range [{start}, {end}) exceeds series of length {len}")]
    Bounds { start: usize, end: usize, len: usize },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("invalid configuration:\n  {}", .0.join("\n  "))]
    Config(Vec<String>),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("environment state error: {0}")]
    State(String),

    #[error("invariant violation: {0}")]
    Invariant(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error("unsupported checkpoint version {found} (supported: {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("incompatible network: {0}")]
    Compatibility(String),

    #[error("infeasible schedule for {appliance}: {reason}")]
    Infeasible { appliance: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Compatibility(_) | Error::Dimension { .. } | Error::UnsupportedVersion { .. } => 3,
            Error::Infeasible { .. } => 4,
            Error::Numerical(_) | Error::Invariant(_) | Error::State(_) => 1,
            _ => 2,
        }
    }
}
