//! Periodic solutions of retarded functional differential equations (RFDEs)
//! with unknown period, computed by piecewise orthogonal collocation of the
//! solution's derivative.
//!
//! The problem `y'(t) = G(y_t)` is rescaled to period-1 time and posed as a
//! fixed point of a map built from the Green operator of `v' = u`, with the
//! periodicity of the full state (not just the endpoint values) imposed
//! through the boundary segment. Modules:
//!
//! - [`mesh`]: piecewise polynomial spaces, restriction and prolongation
//! - [`problem`]: RFDE definitions and delay-term discretization
//! - [`greens`]: candidate solutions and the Green operator
//! - [`solver`]: collocation residual, Jacobian, damped Newton
//! - [`floquet`]: monodromy matrix and stability multipliers
//! - [`oracle`]: method-of-steps reference integrator and convergence studies
//! - [`catalog`]: built-in benchmark problems
//! - [`cli`]: command-line front end and file formats

pub mod catalog;
pub mod cli;
pub mod error;
pub mod floquet;
pub mod greens;
pub mod mesh;
pub mod oracle;
pub mod problem;
pub mod solver;

pub use error::{Error, Result};
