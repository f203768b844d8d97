use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numerical,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("non-binary entry {value:?} for lower-level variable {lower:?}, higher-level variable {higher:?}")]
    NonBinary {
        lower: String,
        higher: String,
        value: String,
    },

    #[error("orphan lower-level variable(s): {0:?}")]
    OrphanLower(Vec<String>),

    #[error("higher-level variable(s) without members: {0:?}")]
    EmptyHigher(Vec<String>),

    #[error("duplicate name {0:?}")]
    DuplicateName(String),

    #[error("unique-variable condition fails for: {0:?}")]
    Uvc(Vec<String>),

    #[error("column(s) not in binding map: {0:?}")]
    UnknownColumns(Vec<String>),

    #[error("binding-map variable(s) missing from data: {0:?}")]
    MissingColumns(Vec<String>),

    #[error("need at least {need} samples, got {got}")]
    TooFewSamples { need: usize, got: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("non-positive variance estimate for higher-level variable(s) {0:?}")]
    NonPositiveDiagonal(Vec<usize>),

    #[error("no positive definite covariance after {0} attempts")]
    NotPositiveDefinite(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Io(_) | Error::Parse { .. } => ErrorKind::Io,
            Error::NonPositiveDiagonal(_) | Error::NotPositiveDefinite(_) => ErrorKind::Numerical,
            _ => ErrorKind::Validation,
        }
    }

    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            line,
            msg: msg.into(),
        }
    }
}
