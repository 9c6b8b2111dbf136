use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("duplicate line between buses {0} and {1}")]
    DuplicateLine(usize, usize),

    #[error("magnitude ratio undefined: no entry is nonzero in both matrices")]
    UndefinedRatio,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("expected {expected} measurements, got {actual}")]
    WrongModel { expected: String, actual: String },

    #[error("linear system is singular even after jitter: {0}")]
    SingularSystem(String),

    #[error("solver diverged: {0}")]
    Divergence(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerical machinery rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::SingularSystem(_) | Error::Divergence(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
