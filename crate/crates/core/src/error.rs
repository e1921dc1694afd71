use thiserror::Error;

/// Errors shared across the solver modules. Variants carry enough context to
/// diagnose a failure without re-running the computation.
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// An argument violated a documented domain restriction.
    #[error("domain error: {what}: {value}")]
    Domain { what: &'static str, value: f64 },

    /// An iterative method exhausted its iteration budget. The last bracket
    /// is reported so the caller can see how close the method got.
    #[error("no convergence after {iterations} iterations (bracket [{low}, {high}])")]
    Convergence {
        iterations: usize,
        low: f64,
        high: f64,
    },

    /// A root finder was handed (or produced) an interval that does not
    /// bracket a sign change.
    #[error("bracket [{low}, {high}] does not straddle a root (f(low)={f_low}, f(high)={f_high})")]
    Bracket {
        low: f64,
        high: f64,
        f_low: f64,
        f_high: f64,
    },

    /// An inner iteration stopped contracting; the residual was growing.
    #[error("iteration diverged: residual grew to {residual}")]
    Divergence { residual: f64 },

    /// A grid was too coarse to resolve the feature being extracted.
    #[error("grid too coarse: {what}")]
    Resolution { what: &'static str },

    /// A Monte-Carlo estimate is unreliable (e.g. too many censored paths).
    #[error("estimate unreliable: {what}: {value}")]
    Unreliable { what: &'static str, value: f64 },

    /// A path of zero length was requested.
    #[error("empty path: n must be >= 1")]
    EmptyPath,
}

pub type Result<T> = std::result::Result<T, Error>;
