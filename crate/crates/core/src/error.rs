use thiserror::Error;

/// Errors produced by the laboratory.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two objects that must share a grid (or shape) do not.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A reaction or diffusion coefficient failed its validation sweep.
    #[error("invalid coefficient `{name}`: {reason}")]
    InvalidCoefficient { name: String, reason: String },

    /// A discretized covariance is not positive semi-definite.
    #[error("covariance is not positive semi-definite: eigenvalue {index} = {value:e}")]
    NotPositiveDefinite { index: usize, value: f64 },

    /// The resolvent root could not be bracketed or did not converge.
    #[error("resolvent failure at u = {u}, lambda = {lambda}: {reason}")]
    Resolvent { u: f64, lambda: f64, reason: String },

    /// A deterministic map solve left a defect above tolerance.
    #[error("map defect {defect:e} exceeds tolerance {tolerance:e}")]
    Defect { defect: f64, tolerance: f64 },

    /// Picard iteration did not reach the stopping tolerance.
    #[error("picard iteration did not converge in {iterations} iterations (deltas: {deltas:?})")]
    PicardDivergence { iterations: usize, deltas: Vec<f64> },

    /// A path in an ensemble failed; carries the derived seed.
    #[error("path {path_id} (seed {seed}) failed: {source}")]
    Path {
        path_id: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    /// Derivative decomposition did not add up.
    #[error("decomposition mismatch: total {total:e} vs inner {inner:e} + a {a_term:e} + b {b_term:e}")]
    Decomposition {
        total: f64,
        inner: f64,
        a_term: f64,
        b_term: f64,
    },

    /// A non-finite value appeared in a field.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// Configuration problem, keyed by the offending config path.
    #[error("config `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    /// Process exit code for the command-line front-end: 1 config, 2 numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::InvalidCoefficient { .. } | Error::Unsupported(_) => 1,
            Error::Io(_) | Error::Format(_) => 3,
            Error::Path { source, .. } => source.exit_code(),
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
