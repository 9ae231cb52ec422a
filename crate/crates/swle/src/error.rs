use thiserror::Error;

/// Library-wide error type.
#[derive(Error, Debug, Clone)]
pub enum Error {
    /// A parameter left the valid region of a family or transform.
    #[error("domain error: {param} = {value} violates `{constraint}`")]
    Domain {
        param: &'static str,
        value: f64,
        constraint: &'static str,
    },

    /// A weight-function transform or hyperparameter search failed.
    #[error("calibration error: {message}")]
    Calibration { message: String },

    /// Exponent too large to evaluate a bias adjustment safely.
    #[error("overflow in bias adjustment exponent: {exponent}")]
    Overflow { exponent: f64 },

    /// Root bracketing failed on the given interval.
    #[error("no sign change on bracket [{lo}, {hi}] (g(lo) = {g_lo}, g(hi) = {g_hi})")]
    Bracketing { lo: f64, hi: f64, g_lo: f64, g_hi: f64 },

    /// Iterative fit did not converge; carries the trace of score norms.
    #[error("no convergence after {iterations} iterations (last score norm {final_norm}); trace: {trace:?}")]
    NonConvergence {
        iterations: usize,
        final_norm: f64,
        trace: Vec<f64>,
    },

    /// A matrix was numerically singular.
    #[error("{what} is numerically singular (condition estimate {condition:.3e})")]
    Singular { what: &'static str, condition: f64 },

    /// Design matrix does not have full column rank.
    #[error("design matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficient { rank: usize, cols: usize },

    /// Adaptive quadrature failed to meet its tolerance.
    #[error("quadrature did not converge: estimate {estimate}, error bound {error_bound}")]
    QuadratureNonConvergence { estimate: f64, error_bound: f64 },

    /// An observation record is internally inconsistent.
    #[error("invalid record {index}: {message}")]
    InvalidRecord { index: usize, message: String },

    /// Malformed input data (CSV or configuration).
    #[error("invalid data{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    InvalidData { row: Option<usize>, message: String },

    /// A precondition of an operation was violated.
    #[error("precondition violated: {0}")]
    Precondition(String),

    /// Too many replications of a simulation study failed.
    #[error("study failed: {failed} of {total} replications errored; first error: {first}")]
    StudyFailure {
        failed: usize,
        total: usize,
        first: String,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
