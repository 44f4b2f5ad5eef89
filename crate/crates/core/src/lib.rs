//! Discontinuous Galerkin solver for the 2D×2V Vlasov–Stokes system.
//!
//! The crate couples an upwind dG discretization of the kinetic transport
//! equation on the phase space `Ω_x × Ω_v` with a symmetric interior penalty
//! dG discretization of the generalized Stokes system on `Ω_x`, advanced in
//! time by Lie–Trotter splitting with forward Euler sub-steps. It ships a
//! manufactured-solution harness, conservation diagnostics, and a CLI that
//! emits CSV convergence tables and conservation audits.

pub mod basis;
pub mod cli;
pub mod diagnostics;
pub mod linalg;
pub mod manufactured;
pub mod mesh;
pub mod splitting;
pub mod stokes;
pub mod vlasov;

use thiserror::Error;

/// Unified error type for mesh construction, assembly, solves, and the CLI.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),
    #[error("invalid basis or quadrature: {0}")]
    InvalidBasis(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("singular linear system: {0}")]
    SingularSystem(String),
    #[error("linear solve did not reach required accuracy: {0}")]
    SolveAccuracy(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("time step rejected: {0}")]
    TimeStep(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
