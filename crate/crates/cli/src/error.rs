use std::path::PathBuf;

use gendyne_core::Error as CoreError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("audit failed: {0}")]
    Audit(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 config, 2 numerical or audit, 3 IO.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Audit(_) => 2,
            CliError::Io { .. } => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            // Bad parameters, or a truncation too small for the requested state.
            CoreError::Domain(_) | CoreError::DimensionMismatch { .. } | CoreError::HomodyneLimit(_) | CoreError::Truncation { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::Singular { .. } | CoreError::Numerical(_) | CoreError::Integration { .. } | CoreError::StepSize { .. } => {
                CliError::Numerical(e.to_string())
            }
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
