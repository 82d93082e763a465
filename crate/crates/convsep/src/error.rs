use std::path::PathBuf;

/// Failures of a command-line run.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// The run configuration is invalid.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// A file could not be read or written.
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A JSON document could not be parsed or written.
    #[error("{}: {source}", path.display())]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// A file parsed but its content is inconsistent.
    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },

    /// Error from the separation core.
    #[error(transparent)]
    Core(#[from] convsep_core::Error),
}

impl CliError {
    /// Process exit code: 3 for numerical failures of the separation loop,
    /// 2 for everything caused by configuration or input.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(e) if e.is_numerical() => 3,
            _ => 2,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        CliError::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
