use thiserror::Error;
use xscript_core::Error as CoreError;

pub type CliResult<T> = Result<T, CliError>;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    /// 1 for usage and configuration problems, 2 for data and I/O, 3 for
    /// numeric failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Config(_) => 1,
            CliError::Data(_) => 2,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::TooManyWords { .. } => 1,
                CoreError::Numeric(_) | CoreError::DegenerateRow { .. } | CoreError::Dimension { .. } | CoreError::Rank(_) => 3,
                CoreError::Vocab { .. }
                | CoreError::Label(_)
                | CoreError::Parse { .. }
                | CoreError::EmptyCorpus
                | CoreError::Data(_)
                | CoreError::Checkpoint(_)
                | CoreError::Io(_)
                | CoreError::Json(_) => 2,
            },
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}
