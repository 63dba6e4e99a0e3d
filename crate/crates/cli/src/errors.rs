use std::path::Path;

pub use cmbd_core::Error as CoreError;

/// Everything a command can fail with, mapped onto the fixed exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Core(#[from] CoreError),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    /// Malformed on-disk artifacts: manifests, sidecars, checkpoints,
    /// configs.
    #[error("{0}")]
    Format(String),
    /// A downstream stage was invoked before its inputs exist.
    #[error("missing {artifact}: run `{stage}` first")]
    MissingStage { artifact: String, stage: String },
}

impl CliError {
    /// 0 success, 2 validation, 3 backend, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(CoreError::Backend(_)) => 3,
            CliError::Core(CoreError::Numeric(_)) => 4,
            CliError::Core(CoreError::Validation(_))
            | CliError::Io { .. }
            | CliError::Format(_)
            | CliError::MissingStage { .. } => 2,
        }
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        CliError::Io {
            context: context.into(),
            source,
        }
    }

    pub fn io_at(action: &str, path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            context: format!("{action} {}", path.display()),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
