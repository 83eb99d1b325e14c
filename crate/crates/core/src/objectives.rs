//! Agent objective families, sector bounds, and the centralized reference
//! solver for the subspace-constrained optimum.
//!
//! Each agent k holds a scalar objective J_k that is m_k-strongly convex
//! with L_k-Lipschitz gradient. The network-wide problem is
//!
//! ```text
//! min Σ_k J_k(ω_k)   subject to   ω ∈ ℛ(𝒰).
//! ```

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::subspace_gossip::Subspace;

/// Slack applied to empirical sector-bound checks.
pub const SECTOR_SLACK: f64 = 1e-9;

/// Per-agent strong-convexity and gradient-Lipschitz constants.
#[derive(Debug, Clone)]
pub struct SectorBounds {
    m: DVector<f64>,
    l: DVector<f64>,
}

impl SectorBounds {
    /// Requires 0 < m_k ≤ L_k for every agent.
    pub fn new(m: DVector<f64>, l: DVector<f64>) -> Result<Self> {
        if m.len() != l.len() {
            return Err(Error::DimensionMismatch {
                context: "sector bounds",
                expected: m.len(),
                got: l.len(),
            });
        }
        for k in 0..m.len() {
            if !(m[k] > 0.0 && m[k] <= l[k]) {
                return Err(Error::InvalidParam {
                    name: "sector",
                    reason: format!("agent {k}: need 0 < m <= L, got m = {}, L = {}", m[k], l[k]),
                });
            }
        }
        Ok(Self { m, l })
    }

    pub fn uniform(n: usize, m: f64, l: f64) -> Result<Self> {
        Self::new(DVector::from_element(n, m), DVector::from_element(n, l))
    }

    pub fn n_agents(&self) -> usize {
        self.m.len()
    }

    pub fn m_of(&self, k: usize) -> f64 {
        self.m[k]
    }

    pub fn l_of(&self, k: usize) -> f64 {
        self.l[k]
    }

    /// Global strong-convexity constant m = min_k m_k.
    pub fn m_min(&self) -> f64 {
        self.m.min()
    }

    /// Global Lipschitz constant L = max_k L_k.
    pub fn l_max(&self) -> f64 {
        self.l.max()
    }

    /// Condition ratio κ = L/m.
    pub fn kappa(&self) -> f64 {
        self.l_max() / self.m_min()
    }

    /// diag{m_k}.
    pub fn m_bar(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.m)
    }

    /// diag{L_k}.
    pub fn l_bar(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.l)
    }
}

/// Functional form of the per-agent objectives.
#[derive(Debug, Clone)]
enum Form {
    /// J_k(ω) = a_k(ω − b_k)² − cos(ω), with a_k > 1/2.
    QuadCos { a: DVector<f64>, b: DVector<f64> },
    /// J_k(ω) = a_k(ω − b_k)², with a_k > 0.
    Quadratic { a: DVector<f64>, b: DVector<f64> },
}

/// A family of per-agent objectives with known sector bounds.
#[derive(Debug, Clone)]
pub struct ObjectiveFamily {
    form: Form,
    sector: SectorBounds,
}

impl ObjectiveFamily {
    /// Quadratic-plus-cosine family J_k(ω) = a_k(ω − b_k)² − cos(ω).
    ///
    /// The Hessian is 2a_k + cos(ω) ∈ [2a_k − 1, 2a_k + 1], so the sector
    /// bounds are m_k = 2a_k − 1 and L_k = 2a_k + 1; strong convexity
    /// requires a_k > 1/2.
    pub fn quad_cos(a: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        check_same_len(&a, &b)?;
        for k in 0..a.len() {
            if a[k] <= 0.5 {
                return Err(Error::InvalidCoefficient {
                    agent: k,
                    value: a[k],
                    lower: 0.5,
                });
            }
        }
        let sector = SectorBounds::new(a.map(|v| 2.0 * v - 1.0), a.map(|v| 2.0 * v + 1.0))?;
        Ok(Self {
            form: Form::QuadCos { a, b },
            sector,
        })
    }

    /// Pure quadratic family J_k(ω) = a_k(ω − b_k)², with m_k = L_k = 2a_k.
    pub fn quadratic(a: DVector<f64>, b: DVector<f64>) -> Result<Self> {
        check_same_len(&a, &b)?;
        for k in 0..a.len() {
            if a[k] <= 0.0 {
                return Err(Error::InvalidCoefficient {
                    agent: k,
                    value: a[k],
                    lower: 0.0,
                });
            }
        }
        let sector = SectorBounds::new(a.map(|v| 2.0 * v), a.map(|v| 2.0 * v))?;
        Ok(Self {
            form: Form::Quadratic { a, b },
            sector,
        })
    }

    pub fn n_agents(&self) -> usize {
        self.sector.n_agents()
    }

    pub fn sector(&self) -> &SectorBounds {
        &self.sector
    }

    /// True when every gradient is affine (fixed points solvable directly).
    pub fn is_quadratic(&self) -> bool {
        matches!(self.form, Form::Quadratic { .. })
    }

    /// Gradient of agent k's objective at ω.
    pub fn grad_k(&self, k: usize, omega: f64) -> f64 {
        match &self.form {
            Form::QuadCos { a, b } => 2.0 * a[k] * (omega - b[k]) + omega.sin(),
            Form::Quadratic { a, b } => 2.0 * a[k] * (omega - b[k]),
        }
    }

    /// Value of agent k's objective at ω.
    pub fn value_k(&self, k: usize, omega: f64) -> f64 {
        match &self.form {
            Form::QuadCos { a, b } => a[k] * (omega - b[k]).powi(2) - omega.cos(),
            Form::Quadratic { a, b } => a[k] * (omega - b[k]).powi(2),
        }
    }

    /// Stacked per-agent gradients: component k is ∇J_k(y_k).
    pub fn gradient(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        let n = self.n_agents();
        if y.len() != n {
            return Err(Error::DimensionMismatch {
                context: "gradient input",
                expected: n,
                got: y.len(),
            });
        }
        Ok(DVector::from_fn(n, |k, _| self.grad_k(k, y[k])))
    }

    /// Network objective Σ_k J_k(ω_k).
    pub fn total_value(&self, omega: &DVector<f64>) -> f64 {
        (0..self.n_agents()).map(|k| self.value_k(k, omega[k])).sum()
    }
}

fn check_same_len(a: &DVector<f64>, b: &DVector<f64>) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            context: "objective coefficients",
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(())
}

/// Output of the centralized reference solver.
#[derive(Debug, Clone)]
pub struct OptResult {
    /// The constrained minimizer ω^opt.
    pub omega_opt: DVector<f64>,
    pub iterations: usize,
    /// ‖𝒫·∇J(ω^opt)‖ at termination.
    pub residual: f64,
}

/// Centralized projected-gradient reference solver started from the origin.
///
/// Iterates ω ← 𝒫(ω − μ·∇J(ω)) until ‖ω⁺ − ω‖ < `tol`.
pub fn solve_opt(
    fam: &ObjectiveFamily,
    sub: &Subspace,
    mu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<OptResult> {
    let start = DVector::zeros(sub.n());
    solve_opt_from(fam, sub, &start, mu, tol, max_iter)
}

/// As [`solve_opt`] from a caller-supplied starting point.
pub fn solve_opt_from(
    fam: &ObjectiveFamily,
    sub: &Subspace,
    start: &DVector<f64>,
    mu: f64,
    tol: f64,
    max_iter: usize,
) -> Result<OptResult> {
    let n = sub.n();
    if fam.n_agents() != n {
        return Err(Error::DimensionMismatch {
            context: "objective family vs subspace",
            expected: n,
            got: fam.n_agents(),
        });
    }
    if !(mu > 0.0 && mu < 2.0 / fam.sector().l_max()) {
        return Err(Error::InvalidParam {
            name: "mu",
            reason: format!("must lie in (0, 2/L) = (0, {})", 2.0 / fam.sector().l_max()),
        });
    }
    let p = sub.projection();
    let mut omega = p * start;
    let mut step = f64::INFINITY;
    for it in 1..=max_iter {
        let grad = fam.gradient(&omega)?;
        let next = p * (&omega - grad * mu);
        step = (&next - &omega).norm();
        omega = next;
        if step < tol {
            let residual = (p * fam.gradient(&omega)?).norm();
            return Ok(OptResult {
                omega_opt: omega,
                iterations: it,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: step,
    })
}

/// Reference solve with the default step μ = 1/L and tolerance 1e-10.
pub fn solve_opt_default(fam: &ObjectiveFamily, sub: &Subspace) -> Result<OptResult> {
    solve_opt(fam, sub, 1.0 / fam.sector().l_max(), 1e-10, 1_000_000)
}

/// Per-agent extremes of the gradient difference quotients observed during
/// an empirical sector check.
#[derive(Debug, Clone)]
pub struct SectorReport {
    /// Smallest observed (∇J_k(x) − ∇J_k(y))/(x − y) per agent.
    pub min_ratio: DVector<f64>,
    /// Largest observed quotient per agent.
    pub max_ratio: DVector<f64>,
    /// True iff every agent's quotients stay within [m_k − slack, L_k + slack].
    pub ok: bool,
}

/// Samples difference quotients of the family's gradients over `[lo, hi]`
/// and compares them against the claimed sector bounds.
pub fn verify_sector(
    fam: &ObjectiveFamily,
    n_samples: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> SectorReport {
    verify_sector_fn(
        |k, w| fam.grad_k(k, w),
        fam.sector(),
        n_samples,
        lo,
        hi,
        seed,
    )
}

/// As [`verify_sector`] for an arbitrary claimed (gradient, sector) pair.
/// This is a sampling-based spot check, not a proof.
pub fn verify_sector_fn(
    grad: impl Fn(usize, f64) -> f64,
    sector: &SectorBounds,
    n_samples: usize,
    lo: f64,
    hi: f64,
    seed: u64,
) -> SectorReport {
    let n = sector.n_agents();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut min_ratio = DVector::from_element(n, f64::INFINITY);
    let mut max_ratio = DVector::from_element(n, f64::NEG_INFINITY);
    for k in 0..n {
        for _ in 0..n_samples {
            let x: f64 = rng.gen_range(lo..hi);
            let mut y: f64 = rng.gen_range(lo..hi);
            while (x - y).abs() < 1e-9 * (hi - lo).max(1.0) {
                y = rng.gen_range(lo..hi);
            }
            let ratio = (grad(k, x) - grad(k, y)) / (x - y);
            min_ratio[k] = min_ratio[k].min(ratio);
            max_ratio[k] = max_ratio[k].max(ratio);
        }
    }
    let ok = (0..n).all(|k| {
        min_ratio[k] >= sector.m_of(k) - SECTOR_SLACK && max_ratio[k] <= sector.l_of(k) + SECTOR_SLACK
    });
    SectorReport {
        min_ratio,
        max_ratio,
        ok,
    }
}
