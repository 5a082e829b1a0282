use thiserror::Error;

/// Errors produced anywhere in the alignment toolkit.
#[derive(Debug, Error)]
pub enum AlignError {
    /// Input data violates a structural invariant (bounds, lengths, shapes).
    #[error("malformed input: {0}")]
    MalformedInput(String),

    /// A metric is not defined for the given data (empty sure set, zero variance).
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    /// A scorer was asked for something it cannot provide.
    #[error("capability error: {0}")]
    Capability(String),

    /// A scorer backend failed or replied with something unusable.
    #[error("backend error: {message}{}", line.as_ref().map(|l| format!(" (line: {l})")).unwrap_or_default())]
    Backend {
        message: String,
        line: Option<String>,
    },

    /// A scorer backend did not reply in time.
    #[error("backend timed out after {0:?}")]
    Timeout(std::time::Duration),

    /// Least-squares fitting failed.
    #[error("fit error: {0}")]
    Fit(String),

    /// Ensemble training failed.
    #[error("training error{}: {message}", epoch.map(|e| format!(" at epoch {e}")).unwrap_or_default())]
    Training {
        epoch: Option<usize>,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl AlignError {
    pub(crate) fn malformed(msg: impl Into<String>) -> Self {
        AlignError::MalformedInput(msg.into())
    }

    pub(crate) fn backend(msg: impl Into<String>, line: Option<&str>) -> Self {
        AlignError::Backend {
            message: msg.into(),
            line: line.map(str::to_owned),
        }
    }
}

pub type Result<T> = std::result::Result<T, AlignError>;
