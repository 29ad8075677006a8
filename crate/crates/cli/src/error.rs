use std::path::{Path, PathBuf};

use spline_dpd::DpdError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dpd(#[from] DpdError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("self-test failed: {0} check(s) did not pass")]
    SelfTest(usize),
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 2 invalid configuration, 3 numeric divergence, 4 I/O.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::SelfTest(_) => 1,
            CliError::Dpd(e) => match e {
                DpdError::InvalidArgument(_) | DpdError::NotCalibrated(_) | DpdError::Serde(_) => 2,
                DpdError::Numeric(_) | DpdError::Divergence(_) | DpdError::Alignment(_) => 3,
                DpdError::Io { .. } => 4,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
