use thiserror::Error;

pub type Result<T> = std::result::Result<T, DpdError>;

#[derive(Debug, Error)]
pub enum DpdError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    /// The requested (model, order, memory) cell has no entry in the
    /// calibration table of published operation counts.
    #[error("not calibrated: {0}")]
    NotCalibrated(String),

    #[error("adaptation diverged: {0}")]
    Divergence(String),

    #[error("alignment failed: {0}")]
    Alignment(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

impl DpdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DpdError::InvalidArgument(msg.into())
    }

    pub(crate) fn numeric(msg: impl Into<String>) -> Self {
        DpdError::Numeric(msg.into())
    }

    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        DpdError::Io {
            context: context.into(),
            source,
        }
    }
}
