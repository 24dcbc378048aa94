use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Config,
    Domain,
    Solver,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("singular system: residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Singular { residual: f64, tolerance: f64 },
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("unsupported model: {0}")]
    UnsupportedModel(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("empty forget set: {0}")]
    EmptyForget(String),
    #[error("empty retain set: {0}")]
    EmptyRetain(String),
    #[error("stratification failed: {0}")]
    Stratification(String),
    #[error("unknown group id {0}")]
    UnknownGroup(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Singular { .. } | Error::NonFinite(_) => ErrorKind::Solver,
            Error::Parse { .. } | Error::Io(_) => ErrorKind::Config,
            _ => ErrorKind::Domain,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        let line = err
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or_default();
        Error::Parse {
            line,
            message: err.to_string(),
        }
    }
}
