//! Error types shared across the toolkit.

use thiserror::Error;

/// Errors produced by construction, validation, simulation, and analysis.
#[derive(Debug, Error)]
pub enum Error {
    /// Basis matrix does not have full column rank.
    #[error("rank-deficient basis: singular value ratio {ratio:.3e} below threshold {threshold:.3e}")]
    RankDeficient { ratio: f64, threshold: f64 },

    /// Matrix or vector dimensions do not agree.
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    /// Matrix failed gossip validation (Lemma-3 style conditions).
    #[error("not a valid gossip matrix: {0}")]
    NotValidGossip(String),

    /// A scalar parameter is outside its admissible range.
    #[error("invalid parameter {name}: {reason}")]
    InvalidParam { name: &'static str, reason: String },

    /// A required algorithm parameter is absent.
    #[error("missing parameter: {0}")]
    MissingParam(&'static str),

    /// Objective coefficient violates the strong-convexity requirement.
    #[error("invalid coefficient: agent {agent} has a = {value}, need a > {lower}")]
    InvalidCoefficient { agent: usize, value: f64, lower: f64 },

    /// Unrecognized algorithm name.
    #[error("unknown algorithm: {0}")]
    UnknownAlgorithm(String),

    /// Iterative solve failed to reach the requested tolerance.
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    /// Trajectory state norm exceeded the divergence guard.
    #[error("divergence at step {step}: state norm {norm:.3e}")]
    Divergence { step: usize, norm: f64 },

    /// Error series is not in a clean geometric-decay phase.
    #[error("no linear convergence phase detected: {0}")]
    NotLinearPhase(String),

    /// Too few runs or steps for a meaningful estimate.
    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    /// Off-by-one filter weight outside [0, 1].
    #[error("invalid rho_bar {0}: must lie in [0, 1]")]
    InvalidRhoBar(f64),

    /// No certificate exists (or none found) for the requested bound.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Upper bracket of the rate bisection is already infeasible.
    #[error("no certificate at the upper rate bracket rho = {rho_hi}")]
    InfeasibleAtUpper { rho_hi: f64 },

    /// Numerical breakdown inside the SDP solver.
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

pub type Result<T> = std::result::Result<T, Error>;
