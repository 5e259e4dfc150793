use std::path::PathBuf;

use dualseg_core::Error as CoreError;

/// Process exit statuses. Stable across releases.
pub mod exit {
    pub const OK: i32 = 0;
    pub const FAILURE: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const IO: i32 = 3;
    pub const NON_FINITE_LOSS: i32 = 4;
    pub const CHECKPOINT_MISMATCH: i32 = 5;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("cannot parse config {path}: {message}")]
    ConfigParse { path: PathBuf, message: String },
    #[error("cannot parse manifest {path}: {message}")]
    ManifestParse { path: PathBuf, message: String },
    #[error("missing input {0}; run the preceding command first")]
    MissingInput(PathBuf),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::ConfigParse { .. } => exit::CONFIG,
            CliError::ManifestParse { .. } | CliError::MissingInput(_) => exit::IO,
            CliError::Core(e) => match e {
                CoreError::InvalidConfig(_) => exit::CONFIG,
                CoreError::Io { .. }
                | CoreError::MissingFile(_)
                | CoreError::MalformedHeader { .. }
                | CoreError::PayloadLength { .. } => exit::IO,
                CoreError::NonFiniteLoss { .. } => exit::NON_FINITE_LOSS,
                CoreError::Checkpoint(_) => exit::CHECKPOINT_MISMATCH,
                _ => exit::FAILURE,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
