use drcs_core::DrcsError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Core(#[from] DrcsError),

    #[error("io error on {path}: {source}")]
    Io { path: String, source: std::io::Error },

    #[error("could not write report: {0}")]
    Report(String),

    #[error("{0} report rows failed; see the status column")]
    FailedRows(usize),
}

impl CliError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        CliError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// 2 for bad input or configuration, 3 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(
                DrcsError::NotConverged { .. }
                | DrcsError::EmptyActiveSet
                | DrcsError::NonPositiveWeightSum(_)
                | DrcsError::Eigen(_)
                | DrcsError::Bracketing(_),
            )
            | CliError::FailedRows(_) => 3,
            _ => 2,
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Report(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Report(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
