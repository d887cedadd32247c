//! Error type shared by all modules.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("evaluation outside domain: {what} at {value}, domain [{lo}, {hi}]")]
    Domain {
        what: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },

    #[error("period {omega} not above delay {tau}")]
    PeriodBelowDelay { omega: f64, tau: f64 },

    #[error("singular Jacobian (non-hyperbolic orbit or degenerate phase condition?)")]
    SingularJacobian,

    #[error("Newton did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("no limit cycle detected: {0}")]
    NoCycleDetected(String),

    #[error("numerical failure: {0}")]
    NumericalError(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("solution file schema mismatch: found version {found}, reader supports {supported}")]
    Schema { found: u32, supported: u32 },

    #[error("malformed solution file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, Error>;
