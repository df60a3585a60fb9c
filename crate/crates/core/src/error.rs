use thiserror::Error;

use crate::linalg::LinalgError;
use crate::poly::ParseError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("matrix is not upper triangular: entry ({row}, {col}) is nonzero")]
    NotTriangular { row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("capacity exceeded: {what} needs {requested}, cap is {cap}")]
    Capacity {
        what: &'static str,
        requested: usize,
        cap: usize,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("reference integration diverged at x = {x}")]
    Divergence { x: f64 },
    #[error("malformed matrix file, line {line}: {msg}")]
    Format { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("quadrature with {order} nodes cannot integrate degree {degree} exactly")]
    UnderResolved { order: usize, degree: usize },
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
