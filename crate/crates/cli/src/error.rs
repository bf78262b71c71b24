use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}:{line}: {message}")]
    Config { path: String, line: usize, message: String },

    #[error("invalid value for {field}: {message}")]
    Field { field: String, message: String },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Input { path: PathBuf, message: String },

    #[error("invariant check failed: {0}")]
    Invariant(String),

    #[error(transparent)]
    Core(#[from] regnn_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn input(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 input, 3 invariant, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invariant(_) => 3,
            CliError::Core(e) => core_exit_code(e),
            _ => 2,
        }
    }
}

fn core_exit_code(e: &regnn_core::Error) -> i32 {
    use regnn_core::Error as E;
    match e {
        E::Contract(_) => 3,
        E::Numeric(_) | E::SpectralNotConverged { .. } | E::FixedPointNotConverged { .. } => 4,
        E::Sample { source, .. } => core_exit_code(source),
        _ => 2,
    }
}
