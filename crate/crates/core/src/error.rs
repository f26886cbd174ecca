use thiserror::Error;

#[derive(Debug, Error)]
pub enum CmgvaError {
    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// A factorization or solve failed, or a value became non-finite.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer produced a non-finite objective. `state` holds a JSON
    /// dump of the last variational state for diagnosis.
    #[error("optimization diverged: {message}")]
    Diverged { message: String, state: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("target evaluation failed: {0}")]
    Target(String),

    #[error("serialization: {0}")]
    Serde(#[from] serde_json::Error),
}

impl CmgvaError {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Self::Dimension {
            context,
            expected,
            got,
        }
    }

    /// True for failures caused by the numbers rather than the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Self::Numerical(_) | Self::Diverged { .. })
    }
}

pub type Result<T> = std::result::Result<T, CmgvaError>;

pub(crate) fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(CmgvaError::dim(context, expected, got))
    }
}
