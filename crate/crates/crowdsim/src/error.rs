use thiserror::Error;

/// Errors produced by graph construction, inference, theory evaluators, and file IO.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter is outside its documented domain.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The requested combinatorial object cannot exist (or could not be built).
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Vector / matrix shapes do not line up.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A closed form is only defined above the phase transition `(l-1)(r-1)q^2 > 1`.
    #[error("below phase transition: {0}")]
    BelowThreshold(String),

    /// Numerical failure (e.g. power iteration collapsed to the zero vector).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed input file; `line` is 1-based.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit code used by the CLI: 3 for validation failures,
    /// 4 for runtime failures. (Usage errors exit 2 via clap.)
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidInput(_)
            | Error::Infeasible(_)
            | Error::DimensionMismatch(_)
            | Error::BelowThreshold(_)
            | Error::Parse { .. } => 3,
            Error::Numerical(_) | Error::Io(_) => 4,
        }
    }
}
