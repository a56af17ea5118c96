use thiserror::Error;

pub type CliResult<T> = std::result::Result<T, CliError>;

/// CLI failures, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error(transparent)]
    Core(topsim::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn from_core(e: topsim::Error) -> Self {
        match e.root() {
            topsim::Error::Config(m) => CliError::Config(m.clone()),
            topsim::Error::Numerical(m) => CliError::Numerical(m.clone()),
            _ if e.is_data_error() => CliError::Data(e.to_string()),
            _ => CliError::Core(e),
        }
    }

    /// 2 for configuration, 3 for data, 4 for numerical failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Io(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Core(e) => match e.root() {
                topsim::Error::Shape(_) | topsim::Error::Checkpoint(_) => 3,
                _ => 1,
            },
        }
    }
}

impl From<topsim::Error> for CliError {
    fn from(e: topsim::Error) -> Self {
        CliError::from_core(e)
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
