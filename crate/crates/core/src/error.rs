use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("integration diverged at t = {time} s (non-finite state)")]
    IntegrationDiverged { time: f64 },

    #[error("{run}: {source}")]
    Run {
        run: String,
        #[source]
        source: Box<Error>,
    },

    #[error("matrix is not symmetric (asymmetry {asymmetry:e} exceeds {limit:e})")]
    NotSymmetric { asymmetry: f64, limit: f64 },

    #[error("matrix is not positive definite even with jitter (smallest eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { min_eigenvalue: f64 },

    #[error("degenerate system: {0}")]
    Degenerate(String),

    #[error("rank deficiency: {0}")]
    RankDeficient(String),

    #[error("{what} = {value} is out of range ({range})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Wraps an error with the identity of the simulation run that produced it.
    pub fn in_run(self, run: impl Into<String>) -> Self {
        Error::Run {
            run: run.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn dims(context: &'static str, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            context,
            expected,
            found,
        }
    }
}
