use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate projection: smallest singular value {smallest:e} (largest {largest:e})")]
    DegenerateProjection { smallest: f64, largest: f64 },

    #[error("degenerate alignment step at iteration {iter}: {source}")]
    DegenerateStep {
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("degenerate Procrustes fit: cross-covariance has rank {rank} < {dim}")]
    DegenerateFit { rank: usize, dim: usize },

    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("empty dictionary at refinement epoch {epoch}")]
    EmptyDictionary { epoch: usize },

    #[error("no usable queries: {0}")]
    NoQueries(String),

    #[error("refused: {0}")]
    Refused(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Coarse failure classes; the CLI maps each one to its own exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Io,
    Parse,
    Config,
    Numeric,
    EmptyResult,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Io(_) => ErrorClass::Io,
            Error::Parse { .. } | Error::Integrity(_) => ErrorClass::Parse,
            Error::InvalidInput(_)
            | Error::InvalidArgument(_)
            | Error::InvalidConfig(_)
            | Error::Refused(_) => ErrorClass::Config,
            Error::DegenerateProjection { .. }
            | Error::DegenerateStep { .. }
            | Error::DegenerateFit { .. } => ErrorClass::Numeric,
            Error::EmptyDictionary { .. } | Error::NoQueries(_) => ErrorClass::EmptyResult,
        }
    }
}
