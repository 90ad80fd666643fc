use thiserror::Error;

use crate::estimators::StageDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite value in {what} at row {row}, column {col}")]
    NonFinite {
        what: &'static str,
        row: usize,
        col: usize,
    },

    #[error("variance function is not positive at row {row} (value {value})")]
    NonPositiveVariance { row: usize, value: f64 },

    #[error("link derivative does not match the link at t = {t}: analytic {analytic}, numeric {numeric}")]
    DerivativeMismatch { t: f64, analytic: f64, numeric: f64 },

    #[error("parameter outside its domain: {0}")]
    Domain(String),

    #[error("pivot component {pivot} of the direction is not positive ({value})")]
    Sign { pivot: usize, value: f64 },

    #[error("kernel window at {point} holds fewer than two distinct index values")]
    DegenerateWindow { point: f64 },

    #[error("trimming removed every observation")]
    AllTrimmed,

    #[error("{} did not converge after {} iterations (residual {:.3e})", .0.stage, .0.iterations, .0.residual_norm)]
    NoConvergence(Box<StageDiagnostics>),

    #[error("singular Jacobian in {0}")]
    SingularJacobian(String),

    #[error("remove-one-component iterate stuck on the boundary for {0} consecutive steps")]
    BoundaryStall(usize),

    #[error("no sign change of the scale equation after {extensions} bracket extensions (last bracket [{lo}, {hi}])")]
    NoBracket { extensions: usize, lo: f64, hi: f64 },

    #[error("quasi-Fisher information is singular (condition number {condition:.3e})")]
    SingularV { condition: f64 },

    #[error("{failed} of {total} replicates failed")]
    TooManyFailures { failed: usize, total: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
