use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dataset error: {0}")]
    Dataset(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed {what}: {msg}")]
    Format { what: &'static str, msg: String },
    #[error(transparent)]
    Core(#[from] sac_core::Error),
}

impl CliError {
    /// Process exit code: 1 config, 2 dataset, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        use sac_core::Error as E;
        match self {
            Self::Config(_) | Self::Io { .. } | Self::Format { .. } => 1,
            Self::Dataset(_) => 2,
            Self::Numeric(_) => 3,
            Self::Core(E::Dataset(_)) => 2,
            Self::Core(E::NonFinite(_)) => 3,
            Self::Core(_) => 1,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io { path: path.into(), source }
    }
}
