use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("routable core is not strongly connected: {0}")]
    Disconnected(String),
    #[error("no route to action {target} from {source_desc}")]
    Unreachable { source_desc: String, target: usize },
    #[error("action space is empty (no edge hosts a parking spot)")]
    EmptyActionSpace,
    #[error("unknown spot id {spot} (line {line})")]
    UnknownSpot { spot: i64, line: usize },
    #[error("overlapping events for spot {spot} on {day}: lines {first} and {second}")]
    OverlappingEvents {
        spot: usize,
        day: String,
        first: usize,
        second: usize,
    },
    #[error("no event log for day {0}")]
    MissingDay(String),
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("invalid action {action} (action space has {size} actions)")]
    InvalidAction { action: usize, size: usize },
    #[error("no parking violations in the training logs; generate synthetic data to fit a rate model")]
    NoViolations,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("environment {index}: {source}")]
    Env {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Bincode(#[from] bincode::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    /// The underlying error with environment wrappers removed.
    pub fn root(&self) -> &Error {
        match self {
            Error::Env { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by malformed or inconsistent input data.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self.root(),
            Error::Parse { .. }
                | Error::DanglingReference(_)
                | Error::Disconnected(_)
                | Error::Unreachable { .. }
                | Error::EmptyActionSpace
                | Error::UnknownSpot { .. }
                | Error::OverlappingEvents { .. }
                | Error::MissingDay(_)
                | Error::NoViolations
                | Error::Csv(_)
        )
    }
}
