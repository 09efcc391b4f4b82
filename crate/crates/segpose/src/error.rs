use std::path::PathBuf;

use segpose_core::Error as CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{file}: schema violation at `{path}`: {message}")]
    Schema { file: String, path: String, message: String },
    #[error("{file}: unsupported schema_version {found} (expected {expected})")]
    SchemaVersion { file: String, found: u32, expected: u32 },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{file}: {source}")]
    Data { file: &'static str, source: CoreError },
    /// Input files that are individually valid but disagree with each other.
    #[error("{0}")]
    Inconsistent(String),
    #[error("{stage}: {source}")]
    Stage { stage: &'static str, source: CoreError },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Numerical(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn stage(stage: &'static str) -> impl FnOnce(CoreError) -> Error {
        move |source| Error::Stage { stage, source }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    /// Process exit code: 2 configuration, 3 data, 4 numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Schema { .. }
            | Error::SchemaVersion { .. }
            | Error::Data { .. }
            | Error::Inconsistent(_)
            | Error::Io { .. }
            | Error::Csv(_) => 3,
            Error::Numerical(_) => 4,
            Error::Stage { source, .. } => match source {
                CoreError::InvalidConfig(_) | CoreError::InvalidGridSpec(_) | CoreError::InvalidIntrinsics(_) => 2,
                CoreError::NonFinite { .. }
                | CoreError::Degenerate
                | CoreError::CheiralityFailure
                | CoreError::NoConsensus { .. }
                | CoreError::TooFew { .. }
                | CoreError::SamplingExhausted { .. } => 4,
                _ => 3,
            },
        }
    }
}
