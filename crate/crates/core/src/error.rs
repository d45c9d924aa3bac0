use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("numerical error: {0}")]
    Numeric(String),

    /// A mode has zero predicted probability mass under the transition model.
    #[error("degenerate prior: mode {mode} has zero predicted mass")]
    DegeneratePrior { mode: usize },

    #[error("ill-conditioned innovation covariance: {0}")]
    Conditioning(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Io { .. } | Error::Format(_) => 3,
            Error::Numeric(_)
            | Error::Dimension(_)
            | Error::DegeneratePrior { .. }
            | Error::Conditioning(_)
            | Error::Divergence(_) => 4,
        }
    }
}
