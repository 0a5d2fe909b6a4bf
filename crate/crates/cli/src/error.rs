use contrast_iqa::dataset::DatasetError;
use contrast_iqa::features::{ArchiveError, FeatureError};
use contrast_iqa::imagecore::ReadImageError;
use contrast_iqa::metrics::MetricError;
use contrast_iqa::regressor::RegressorError;
use contrast_iqa::synthdata::SynthError;

/// Failure of a command. `Io` covers missing, unreadable or undecodable files
/// (exit 2); `Validation` covers bad arguments and inconsistent inputs (exit 3).
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Validation(String),
}

impl CliError {
    pub fn io(msg: impl Into<String>) -> Self {
        CliError::Io(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn code(&self) -> i32 {
        match self {
            CliError::Io(_) => 2,
            CliError::Validation(_) => 3,
        }
    }

    /// Prefixes the message with the flag or file it concerns.
    pub fn context(self, what: impl std::fmt::Display) -> Self {
        match self {
            CliError::Io(m) => CliError::Io(format!("{what}: {m}")),
            CliError::Validation(m) => CliError::Validation(format!("{what}: {m}")),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ReadImageError> for CliError {
    fn from(e: ReadImageError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        match e {
            DatasetError::MissingFile(_) | DatasetError::Io { .. } => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::Io { .. } | SynthError::Read(_) | SynthError::Image(_) => CliError::Io(e.to_string()),
            SynthError::Dataset(d) => d.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        match e {
            FeatureError::Archive(a) => a.into(),
            FeatureError::Extraction(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<RegressorError> for CliError {
    fn from(e: RegressorError) -> Self {
        match e {
            RegressorError::Archive(a) => a.into(),
            RegressorError::Feature(f) => f.into(),
            RegressorError::Image(_) => CliError::Io(e.to_string()),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::Validation(e.to_string())
    }
}
