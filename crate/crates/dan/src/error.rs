use std::io;
use std::path::Path;

/// Failures of the std layer, grouped by process exit code.
#[derive(Debug, thiserror::Error)]
pub enum DanError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical abort: {0}")]
    Numeric(String),
}

impl DanError {
    pub fn exit_code(&self) -> i32 {
        match self {
            DanError::Config(_) => 1,
            DanError::Data(_) => 2,
            DanError::Numeric(_) => 3,
        }
    }

    /// The message without the category prefix.
    pub fn message(&self) -> &str {
        match self {
            DanError::Config(m) | DanError::Data(m) | DanError::Numeric(m) => m,
        }
    }

    pub fn io(path: &Path, e: io::Error) -> Self {
        DanError::Data(format!("{}: {e}", path.display()))
    }
}

impl From<dan_core::Error> for DanError {
    fn from(e: dan_core::Error) -> Self {
        use dan_core::Error as E;
        match e {
            E::Config(m) => DanError::Config(m),
            E::NonFinite(m) => DanError::Numeric(m),
            E::InvalidArgument(m) => DanError::Config(m),
            other => DanError::Data(other.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, DanError>;
