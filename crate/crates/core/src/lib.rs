//! Finite-element solver for a coupled parabolic-parabolic interface problem
//! on the unit square, split by a Robin-Robin prediction step and a
//! defect-correction step that restores second-order accuracy in time.
//!
//! The crate is organized around the pipeline of a convergence experiment:
//!
//! * [`mesh`] builds interface-conforming structured triangulations,
//! * [`assembly`] produces P1 mass/stiffness/interface operators,
//! * [`sparse`] holds the sparse symmetric solvers (direct Cholesky with
//!   factor reuse, plus a conjugate-gradient fallback),
//! * [`schemes`] implements the time-stepping schemes (prediction,
//!   correction, their tangentially modified Dirichlet variants, and a
//!   monolithic reference),
//! * [`problems`] bundles the manufactured solutions,
//! * [`analysis`] computes error norms, convergence rates and the
//!   time-difference diagnostics of the prediction step,
//! * [`cli`] drives everything from the command line.

pub mod analysis;
pub mod assembly;
pub mod cli;
pub mod dense;
pub mod exec;
pub mod mesh;
pub mod problems;
pub mod schemes;
pub mod sparse;

/// Errors produced by the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive definite: pivot {pivot:.6e} in column {col}")]
    NotSpd { col: usize, pivot: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid_argument<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::InvalidArgument(msg.into()))
}
