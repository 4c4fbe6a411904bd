use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: line {line}: {message}")]
    Parse { path: PathBuf, line: u64, message: String },
    #[error("{path}: line {line} has {found} fields, expected {expected}")]
    RaggedRows { path: PathBuf, line: u64, expected: usize, found: usize },
    #[error("{path}: line {line}, column {column}: cannot parse {value:?} as a number")]
    NonNumericCell { path: PathBuf, line: u64, column: usize, value: String },
    #[error("{path}: no label column {column:?}")]
    UnknownLabelColumn { path: PathBuf, column: String },
    #[error("{path}: invalid manifest: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Solver(#[from] ewca_core::error::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    /// 1 for solver and domain errors, 2 for I/O and file formats, 3 for
    /// configuration errors.
    pub fn exit_code(&self) -> i32 {
        use ewca_core::error::Error as E;
        match self {
            CliError::Io { .. }
            | CliError::Parse { .. }
            | CliError::RaggedRows { .. }
            | CliError::NonNumericCell { .. }
            | CliError::UnknownLabelColumn { .. }
            | CliError::Manifest { .. } => 2,
            CliError::Config(_) | CliError::Solver(E::Config(_)) => 3,
            CliError::Solver(_) => 1,
        }
    }
}

macro_rules! config_err {
    ($($arg:tt)*) => {
        $crate::error::CliError::Config(format!($($arg)*))
    };
}
pub(crate) use config_err;
