use thiserror::Error;

/// Errors produced by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdiveError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    /// Adaptive quadrature ran out of subdivisions. Carries the best estimate
    /// reached and the subinterval with the largest remaining error.
    #[error(
        "quadrature did not converge: estimate {estimate:e}, error {error:e}, \
         worst subinterval [{worst_lo}, {worst_hi}] with error {worst_error:e}"
    )]
    Quadrature {
        estimate: f64,
        error: f64,
        worst_lo: f64,
        worst_hi: f64,
        worst_error: f64,
    },

    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    #[error("assumption violated: {0}")]
    AssumptionViolation(String),

    #[error("degenerate grid: {0}")]
    DegenerateGrid(String),

    #[error("tuning aborted: {0}")]
    TuningAbort(String),

    #[error("dataset integrity check failed for `{name}`: {detail}")]
    DatasetIntegrity { name: String, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for SdiveError {
    fn from(err: std::io::Error) -> Self {
        SdiveError::Io(err.to_string())
    }
}

pub type Result<T> = std::result::Result<T, SdiveError>;
