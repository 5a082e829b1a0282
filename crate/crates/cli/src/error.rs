use alignkit_core::AlignError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad or inconsistent input files and arguments.
    #[error("{0}")]
    Input(String),

    /// Bad configuration or a backend that cannot do what was asked.
    #[error("{0}")]
    Config(String),

    /// The backend or a computation failed at run time.
    #[error("{0}")]
    Runtime(String),

    #[error(transparent)]
    Align(#[from] AlignError),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Csv(#[from] csv::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) | CliError::Csv(_) => 2,
            CliError::Config(_) => 3,
            CliError::Runtime(_) | CliError::Io(_) => 4,
            CliError::Align(e) => match e {
                AlignError::MalformedInput(_) | AlignError::UndefinedMetric(_) | AlignError::Io(_) => 2,
                AlignError::Capability(_) => 3,
                AlignError::Backend { .. }
                | AlignError::Timeout(_)
                | AlignError::Fit(_)
                | AlignError::Training { .. } => 4,
            },
        }
    }
}
