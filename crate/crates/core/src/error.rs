use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments outside a distribution's or function's support.
    #[error("domain error: {0}")]
    Domain(String),

    #[error("matrix is not positive definite ({context})")]
    NotPositiveDefinite { context: String },

    #[error("likelihood of observation {observation} is zero under every component")]
    ZeroLikelihood { observation: usize },

    #[error("posterior precision of class {class} is singular (n_c = {count})")]
    SingularPrecision { class: usize, count: usize },

    #[error("improper posterior for class {class}: inverse-gamma shape {shape}, scale {scale}")]
    ImproperPosterior { class: usize, shape: f64, scale: f64 },

    #[error("interior probability {probability:e} too small to condition on")]
    DegenerateConditioning { probability: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolated(String),

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("invalid settings: {0}")]
    InvalidSettings(String),

    #[error("row {row}, column `{column}`: cannot parse `{value}` as a number")]
    Parse {
        row: usize,
        column: String,
        value: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    /// True for failures raised by the numerics (as opposed to bad input or
    /// configuration).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::NotPositiveDefinite { .. }
            | Error::ZeroLikelihood { .. }
            | Error::SingularPrecision { .. }
            | Error::ImproperPosterior { .. }
            | Error::DegenerateConditioning { .. }
            | Error::InvariantViolated(_) => true,
            Error::AtIteration { source, .. } => source.is_numerical(),
            _ => false,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::AtIteration {
            iteration,
            source: Box::new(self),
        }
    }
}
