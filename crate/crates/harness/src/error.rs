use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Invalid configuration, reported before any training starts.
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(conlearn::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("malformed results file: {0}")]
    Results(String),
}

impl From<conlearn::Error> for HarnessError {
    fn from(e: conlearn::Error) -> Self {
        match e {
            conlearn::Error::Config(msg) => HarnessError::Config(msg),
            other => HarnessError::Core(other),
        }
    }
}

pub type Result<T, E = HarnessError> = std::result::Result<T, E>;
