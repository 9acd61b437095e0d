use std::path::PathBuf;

use thiserror::Error;

/// Exit status for computational failures.
pub const EXIT_FAILURE: u8 = 1;
/// Exit status for bad flags, config keys or input files.
pub const EXIT_USAGE: u8 = 2;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config {path}: {detail}")]
    Config { path: PathBuf, detail: String },

    #[error(transparent)]
    Core(#[from] smoothcert::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::ser::Error),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    pub fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::File {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> u8 {
        use smoothcert::Error as E;
        match self {
            CliError::Usage(_) | CliError::Config { .. } => EXIT_USAGE,
            CliError::File { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
            CliError::File { .. } => EXIT_FAILURE,
            CliError::Core(e) => match e {
                E::InvalidArgument(_) | E::Dimension(_) | E::Format { .. } => EXIT_USAGE,
                E::Io(io) if io.kind() == std::io::ErrorKind::NotFound => EXIT_USAGE,
                _ => EXIT_FAILURE,
            },
            CliError::Json(_) | CliError::Toml(_) => EXIT_FAILURE,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
