//! Simulation and certification of first-order distributed optimization
//! algorithms over subspace constraints.
//!
//! The library covers three layers:
//!
//! - geometry and dynamics: subspace constraints, gossip matrices, objective
//!   families, and the eleven algorithm realizations in state-space form;
//! - simulation: trajectory execution with optional additive gradient noise,
//!   empirical rate and sensitivity estimation;
//! - certification: quadratic-constraint filters on the gradient map, the
//!   extended system they induce, and semidefinite feasibility problems whose
//!   solutions certify worst-case convergence rate ρ and noise sensitivity γ.

pub mod algorithms;
pub mod analysis;
pub mod error;
pub mod iqc;
pub mod objectives;
pub mod simulate;
pub mod subspace_gossip;

pub use error::{Error, Result};
