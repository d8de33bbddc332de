use mdcoop_core::Error as CoreError;
use thiserror::Error;

/// Failures of a command, grouped by the exit status they map to.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Training(String),
    #[error("checkpoint format version {found} is not supported (this build reads version {expected})")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint {path} is corrupted: {reason}")]
    Corrupt { path: String, reason: String },
    #[error("{context}")]
    Io { context: String, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    /// 1 usage, 2 data, 3 numerical or training failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } | CliError::Version { .. } | CliError::Corrupt { .. } => 2,
            CliError::Training(_) => 3,
            CliError::Core(e) => match e {
                CoreError::Config(_) | CoreError::Argument(_) | CoreError::Domain { .. } => 1,
                CoreError::Dataset(_) | CoreError::Io(_) | CoreError::Image(_) => 2,
                CoreError::Shape(_) | CoreError::NonFiniteGradient { .. } | CoreError::NonFiniteLoss { .. } | CoreError::Numerical(_) => 3,
            },
        }
    }
}

pub(crate) fn io_err(context: impl Into<String>) -> impl FnOnce(std::io::Error) -> CliError {
    let context = context.into();
    move |source| CliError::Io { context, source }
}
