use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors shared by every module in this crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("zero-norm vector cannot be compared with an angular metric")]
    ZeroNorm,

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cost matrix entry ({row}, {col}): {source}")]
    CostEntry {
        row: usize,
        col: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("patch {index}: {source}")]
    AtPatch {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("geodesic gradient is singular at |cos| = {cos_sim} (vectors nearly collinear)")]
    GradientSingularity { cos_sim: f64 },

    #[error("oracle does not support this instance: {0}")]
    OracleUnsupported(String),

    #[error(
        "Sinkhorn did not converge after {iterations} iterations \
         (marginal error {marginal_error:.3e})"
    )]
    NotConverged {
        iterations: usize,
        marginal_error: f64,
    },

    #[error("encoding collapsed to the zero vector before normalisation")]
    DegenerateEncoding,

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the inputs.
    ///
    /// The CLI maps these to exit code 3 under `--strict`; everything else
    /// is a configuration or input problem (exit code 2).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotConverged { .. }
            | Error::GradientSingularity { .. }
            | Error::DegenerateEncoding
            | Error::NonFinite(_) => true,
            Error::CostEntry { source, .. }
            | Error::AtPatch { source, .. }
            | Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
