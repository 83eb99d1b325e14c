//! State-space realizations of eleven first-order distributed optimization
//! algorithms generalized to subspace constraints.
//!
//! Every algorithm is expressed in the common form
//!
//! ```text
//! ξ^{t+1} = A ξ^t + B (u^t + w^t),    y^t = C_y ξ^t,    ω^t = C_ω ξ^t,
//! u^t = col{∇J_k(y_k^t)},
//! ```
//!
//! together with an affine trajectory invariant F_ξ ξ^t + F_u u^t = 0 that
//! encodes the algorithm's initialization constraint. The matrices are
//! parameterized by a validated gossip matrix 𝒜, the step size μ, and
//! algorithm-specific extras.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::objectives::ObjectiveFamily;
use crate::subspace_gossip::{GossipMatrix, Subspace};

/// The eleven supported algorithms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    DiSpo,
    Das,
    Extra,
    Nids,
    /// Exact diffusion.
    Ed,
    DiGing,
    /// Unified DIGing variant; agents use the global constants (L+m)/2.
    UDig,
    /// Unified EXTRA variant; agents use the global constant L.
    UExtra,
    AugDgm,
    /// Accelerated method with free parameters (β, γ, δ).
    Svl,
    /// Accelerated method for strongly convex objectives; α = √(mμ).
    AccDngdSc,
}

impl Algorithm {
    pub const ALL: [Algorithm; 11] = [
        Algorithm::DiSpo,
        Algorithm::Das,
        Algorithm::Extra,
        Algorithm::Nids,
        Algorithm::Ed,
        Algorithm::DiGing,
        Algorithm::UDig,
        Algorithm::UExtra,
        Algorithm::AugDgm,
        Algorithm::Svl,
        Algorithm::AccDngdSc,
    ];

    /// Canonical display name.
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::DiSpo => "DiSPO",
            Algorithm::Das => "DAS",
            Algorithm::Extra => "EXTRA",
            Algorithm::Nids => "NIDS",
            Algorithm::Ed => "ED",
            Algorithm::DiGing => "DIGing",
            Algorithm::UDig => "uDIG",
            Algorithm::UExtra => "uEXTRA",
            Algorithm::AugDgm => "AugDGM",
            Algorithm::Svl => "SVL",
            Algorithm::AccDngdSc => "ACC-DNGD-SC",
        }
    }

    /// Case-insensitive lookup by canonical name.
    pub fn from_name(name: &str) -> Result<Self> {
        let lower = name.to_ascii_lowercase();
        Self::ALL
            .iter()
            .copied()
            .find(|alg| alg.name().to_ascii_lowercase() == lower)
            .ok_or_else(|| Error::UnknownAlgorithm(name.to_string()))
    }

    /// State multiplicity n_alg (state dimension is n·n_alg).
    pub fn n_alg(self) -> usize {
        match self {
            Algorithm::DiSpo | Algorithm::Das => 1,
            Algorithm::Ed | Algorithm::UDig | Algorithm::UExtra | Algorithm::Svl => 2,
            Algorithm::Extra | Algorithm::Nids | Algorithm::DiGing | Algorithm::AugDgm => 3,
            Algorithm::AccDngdSc => 4,
        }
    }

    /// True for the nine algorithms whose fixed point equals the constrained
    /// optimum; false for the two with an O(μ) fixed-point bias.
    pub fn is_bias_corrected(self) -> bool {
        !matches!(self, Algorithm::DiSpo | Algorithm::Das)
    }

    /// True when F_ξ is nonzero (a nontrivial trajectory invariant exists).
    pub fn has_invariant(self) -> bool {
        self.is_bias_corrected()
    }

    fn needs_svl_params(self) -> bool {
        matches!(self, Algorithm::Svl)
    }

    fn needs_sector_consts(self) -> bool {
        matches!(self, Algorithm::UDig | Algorithm::UExtra | Algorithm::AccDngdSc)
    }
}

impl std::fmt::Display for Algorithm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::from_name(s)
    }
}

/// Free parameters of the SVL realization. Tuning them is the caller's
/// responsibility.
#[derive(Debug, Clone, Copy)]
pub struct SvlParams {
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

/// Algorithm parameters: the step size plus per-algorithm extras.
#[derive(Debug, Clone, Copy)]
pub struct AlgParams {
    /// Step size μ > 0.
    pub mu: f64,
    /// Required for SVL only.
    pub svl: Option<SvlParams>,
    /// Global constants (m, L) required by uDIG, uEXTRA, and ACC-DNGD-SC.
    pub sector_consts: Option<(f64, f64)>,
}

impl AlgParams {
    pub fn new(mu: f64) -> Self {
        Self {
            mu,
            svl: None,
            sector_consts: None,
        }
    }

    pub fn with_svl(mut self, beta: f64, gamma: f64, delta: f64) -> Self {
        self.svl = Some(SvlParams { beta, gamma, delta });
        self
    }

    pub fn with_sector_consts(mut self, m: f64, l: f64) -> Self {
        self.sector_consts = Some((m, l));
        self
    }

    /// Momentum parameter α = √(m·μ), recomputed on demand.
    pub fn alpha(&self) -> Option<f64> {
        self.sector_consts.map(|(m, _)| (m * self.mu).sqrt())
    }
}

/// One algorithm's realization: the state-space blocks of the common form
/// with the gossip matrix and parameters substituted.
#[derive(Debug, Clone)]
pub struct Realization {
    pub algorithm: Algorithm,
    /// Network dimension n (= number of agents, scalar per-agent states).
    pub n: usize,
    pub n_alg: usize,
    /// Contraction factor σ = ‖𝒜 − 𝒫‖ of the gossip matrix used to build this
    /// realization; carried along as run metadata.
    pub sigma: f64,
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c_y: DMatrix<f64>,
    pub c_omega: DMatrix<f64>,
    pub f_xi: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub params: AlgParams,
}

impl Realization {
    /// State dimension n·n_alg.
    pub fn state_dim(&self) -> usize {
        self.n * self.n_alg
    }

    /// Iterate ω^t = C_ω ξ^t.
    pub fn omega(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.c_omega * xi
    }

    /// Gradient evaluation point y^t = C_y ξ^t.
    pub fn y(&self, xi: &DVector<f64>) -> DVector<f64> {
        &self.c_y * xi
    }

    /// One noiseless step ξ ↦ Aξ + B·∇J(C_y ξ).
    pub fn step(&self, fam: &ObjectiveFamily, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let u = fam.gradient(&self.y(xi))?;
        Ok(&self.a * xi + &self.b * u)
    }
}

/// Horizontal-then-vertical block assembly; all blocks in a row must share
/// heights, all rows must produce equal widths.
fn stack_blocks(rows: &[Vec<DMatrix<f64>>]) -> DMatrix<f64> {
    let total_rows: usize = rows.iter().map(|r| r[0].nrows()).sum();
    let total_cols: usize = rows[0].iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(total_rows, total_cols);
    let mut row_off = 0;
    for row in rows {
        let height = row[0].nrows();
        let mut col_off = 0;
        for block in row {
            assert_eq!(block.nrows(), height, "ragged block row");
            out.view_mut((row_off, col_off), (height, block.ncols()))
                .copy_from(block);
            col_off += block.ncols();
        }
        assert_eq!(col_off, total_cols, "ragged block widths");
        row_off += height;
    }
    out
}

/// Builds the Table-style realization of `algorithm` for gossip matrix `gossip`
/// over subspace `sub` with parameters `params`.
pub fn build(
    algorithm: Algorithm,
    gossip: &GossipMatrix,
    sub: &Subspace,
    params: AlgParams,
) -> Result<Realization> {
    let n = sub.n();
    if gossip.n() != n {
        return Err(Error::DimensionMismatch {
            context: "gossip matrix vs subspace",
            expected: n,
            got: gossip.n(),
        });
    }
    if params.mu <= 0.0 || params.mu.is_nan() {
        return Err(Error::InvalidParam {
            name: "mu",
            reason: format!("must be positive, got {}", params.mu),
        });
    }
    if algorithm.needs_svl_params() && params.svl.is_none() {
        return Err(Error::MissingParam("svl (beta, gamma, delta)"));
    }
    if algorithm.needs_sector_consts() && params.sector_consts.is_none() {
        return Err(Error::MissingParam("sector_consts (m, L)"));
    }

    let mu = params.mu;
    let ga = gossip.matrix().clone();
    let i = DMatrix::<f64>::identity(n, n);
    let z = DMatrix::<f64>::zeros(n, n);
    // Half-averaged gossip matrix Ã = (I + 𝒜)/2.
    let ga_tilde = (&i + &ga) * 0.5;
    let ut = sub.basis().transpose();
    let q = sub.q();
    let uz = DMatrix::<f64>::zeros(q, n);

    let (a, b, c_y, c_omega, f_xi) = match algorithm {
        Algorithm::DiSpo => (
            ga.clone(),
            &i * -mu,
            i.clone(),
            i.clone(),
            stack_blocks(&[vec![uz.clone()]]),
        ),
        Algorithm::Das => (
            ga.clone(),
            &ga * -mu,
            i.clone(),
            i.clone(),
            stack_blocks(&[vec![uz.clone()]]),
        ),
        Algorithm::Extra => (
            stack_blocks(&[
                vec![&i + &ga, -&ga_tilde, &i * mu],
                vec![i.clone(), z.clone(), z.clone()],
                vec![z.clone(), z.clone(), z.clone()],
            ]),
            stack_blocks(&[vec![&i * -mu], vec![z.clone()], vec![i.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![ut.clone(), -&ut, &ut * mu]]),
        ),
        Algorithm::Nids => (
            stack_blocks(&[
                vec![&i + &ga, -&ga_tilde, &ga_tilde * mu],
                vec![i.clone(), z.clone(), z.clone()],
                vec![z.clone(), z.clone(), z.clone()],
            ]),
            stack_blocks(&[vec![&ga_tilde * -mu], vec![z.clone()], vec![i.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![ut.clone(), -&ut, &ut * mu]]),
        ),
        Algorithm::Ed => (
            stack_blocks(&[
                vec![&ga_tilde * 2.0, -&ga_tilde],
                vec![i.clone(), z.clone()],
            ]),
            stack_blocks(&[vec![&ga_tilde * -mu], vec![&i * -mu]]),
            stack_blocks(&[vec![i.clone(), z.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone()]]),
            stack_blocks(&[vec![ut.clone(), -&ut]]),
        ),
        Algorithm::DiGing => (
            stack_blocks(&[
                vec![ga.clone(), &i * -mu, z.clone()],
                vec![z.clone(), ga.clone(), -&i],
                vec![z.clone(), z.clone(), z.clone()],
            ]),
            stack_blocks(&[vec![z.clone()], vec![i.clone()], vec![i.clone()]]),
            stack_blocks(&[vec![ga.clone(), &i * -mu, z.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![uz.clone(), ut.clone(), -&ut]]),
        ),
        Algorithm::UDig | Algorithm::UExtra => {
            let (m, l) = params.sector_consts.expect("checked above");
            let coupling = match algorithm {
                Algorithm::UDig => (&i - &ga) * ((l + m) / 2.0),
                _ => (&i - &ga) * (&ga * l),
            };
            (
                stack_blocks(&[
                    vec![ga.clone(), &i * -mu],
                    vec![coupling, ga.clone()],
                ]),
                stack_blocks(&[vec![&i * -mu], vec![&ga - &i]]),
                stack_blocks(&[vec![i.clone(), z.clone()]]),
                stack_blocks(&[vec![i.clone(), z.clone()]]),
                stack_blocks(&[vec![uz.clone(), ut.clone()]]),
            )
        }
        Algorithm::AugDgm => (
            stack_blocks(&[
                vec![ga.clone(), &i * -mu, z.clone()],
                vec![z.clone(), ga.clone(), -&ga],
                vec![z.clone(), z.clone(), z.clone()],
            ]),
            stack_blocks(&[vec![z.clone()], vec![ga.clone()], vec![i.clone()]]),
            stack_blocks(&[vec![ga.clone(), &ga * -mu, z.clone()]]),
            stack_blocks(&[vec![i.clone(), z.clone(), z.clone()]]),
            stack_blocks(&[vec![uz.clone(), ut.clone(), -&ut]]),
        ),
        Algorithm::Svl => {
            let svl = params.svl.expect("checked above");
            if svl.gamma == 0.0 {
                return Err(Error::InvalidParam {
                    name: "svl.gamma",
                    reason: "must be nonzero".into(),
                });
            }
            (
                stack_blocks(&[
                    vec![ga.clone(), &i * svl.beta],
                    vec![(&ga - &i) / svl.gamma, i.clone()],
                ]),
                stack_blocks(&[vec![&i * -mu], vec![z.clone()]]),
                stack_blocks(&[vec![&i - (&i - &ga) * (svl.delta / svl.gamma), z.clone()]]),
                stack_blocks(&[vec![i.clone(), z.clone()]]),
                stack_blocks(&[vec![uz.clone(), ut.clone()]]),
            )
        }
        Algorithm::AccDngdSc => {
            let alpha = params.alpha().expect("checked above");
            if alpha <= 0.0 || alpha.is_nan() {
                return Err(Error::InvalidParam {
                    name: "sector_consts.m",
                    reason: "alpha = sqrt(m*mu) must be positive".into(),
                });
            }
            let s = 1.0 / (1.0 + alpha);
            (
                stack_blocks(&[
                    vec![&ga * s, &ga * (alpha * s), &i * -mu, z.clone()],
                    vec![&ga * (alpha * s), &ga * s, &i * -(mu / alpha), z.clone()],
                    vec![z.clone(), z.clone(), ga.clone(), -&i],
                    vec![z.clone(), z.clone(), z.clone(), z.clone()],
                ]),
                stack_blocks(&[vec![z.clone()], vec![z.clone()], vec![i.clone()], vec![i.clone()]]),
                stack_blocks(&[vec![
                    &ga * ((alpha * alpha + 1.0) * s * s),
                    &ga * (2.0 * alpha * s * s),
                    &i * (-2.0 * mu * s),
                    z.clone(),
                ]]),
                stack_blocks(&[vec![i.clone(), z.clone(), z.clone(), z.clone()]]),
                stack_blocks(&[vec![uz.clone(), uz.clone(), ut.clone(), -&ut]]),
            )
        }
    };

    let n_alg = algorithm.n_alg();
    let f_u = DMatrix::zeros(q, n);
    debug_assert_eq!(a.nrows(), n * n_alg);
    debug_assert_eq!(b.ncols(), n);
    debug_assert_eq!(c_y.nrows(), n);
    debug_assert_eq!(f_xi.ncols(), n * n_alg);
    Ok(Realization {
        algorithm,
        n,
        n_alg,
        sigma: gossip.sigma(),
        a,
        b,
        c_y,
        c_omega,
        f_xi,
        f_u,
        params,
    })
}

/// How each state block of a realization is seeded at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BlockSeed {
    /// The user-supplied initial iterate ω⁰.
    Iterate,
    /// The zero vector.
    Zero,
    /// ∇J(ω⁰); these blocks are then least-squares corrected onto the
    /// invariant manifold F_ξ ξ⁰ = 0.
    Grad,
}

fn block_seeds(algorithm: Algorithm) -> &'static [BlockSeed] {
    use BlockSeed::*;
    match algorithm {
        Algorithm::DiSpo | Algorithm::Das => &[Iterate],
        Algorithm::Extra | Algorithm::Nids => &[Iterate, Iterate, Grad],
        Algorithm::Ed => &[Iterate, Iterate],
        Algorithm::DiGing | Algorithm::AugDgm => &[Iterate, Grad, Grad],
        Algorithm::UDig | Algorithm::UExtra | Algorithm::Svl => &[Iterate, Zero],
        Algorithm::AccDngdSc => &[Iterate, Iterate, Grad, Grad],
    }
}

/// Canonical initial state for `real` started at iterate ω⁰.
///
/// Iterate-history blocks start at ω⁰, auxiliary blocks at zero, and
/// gradient-tracking/history blocks at ∇J(ω⁰). The gradient blocks are then
/// given the minimum-norm correction that places the state exactly on the
/// invariant manifold F_ξ ξ⁰ = 0 (the iterate blocks are never altered).
pub fn canonical_init(
    real: &Realization,
    fam: &ObjectiveFamily,
    omega0: &DVector<f64>,
) -> Result<DVector<f64>> {
    let n = real.n;
    if omega0.len() != n {
        return Err(Error::DimensionMismatch {
            context: "initial iterate",
            expected: n,
            got: omega0.len(),
        });
    }
    let grad0 = fam.gradient(omega0)?;
    let seeds = block_seeds(real.algorithm);
    let mut xi = DVector::zeros(real.state_dim());
    for (blk, seed) in seeds.iter().enumerate() {
        let value = match seed {
            BlockSeed::Iterate => omega0,
            BlockSeed::Zero => continue,
            BlockSeed::Grad => &grad0,
        };
        xi.rows_mut(blk * n, n).copy_from(value);
    }

    // Correct the gradient blocks so that F_ξ ξ⁰ = 0 holds exactly.
    let grad_blocks: Vec<usize> = seeds
        .iter()
        .enumerate()
        .filter(|(_, s)| **s == BlockSeed::Grad)
        .map(|(i, _)| i)
        .collect();
    if !grad_blocks.is_empty() {
        let violation = &real.f_xi * &xi;
        if violation.amax() > 0.0 {
            let q = real.f_xi.nrows();
            let mut f_free = DMatrix::zeros(q, grad_blocks.len() * n);
            for (col, blk) in grad_blocks.iter().enumerate() {
                f_free
                    .view_mut((0, col * n), (q, n))
                    .copy_from(&real.f_xi.view((0, blk * n), (q, n)));
            }
            let svd = f_free.clone().svd(true, true);
            let correction = svd
                .solve(&violation, 1e-13)
                .map_err(|e| Error::SolverFailure(e.to_string()))?;
            for (col, blk) in grad_blocks.iter().enumerate() {
                let cur = xi.rows(blk * n, n) - correction.rows(col * n, n);
                xi.rows_mut(blk * n, n).copy_from(&cur);
            }
        }
    }
    Ok(xi)
}

/// A stationary point of the noiseless recursion, reached from the canonical
/// initialization (which selects the fixed point on the invariant manifold).
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub xi_star: DVector<f64>,
    pub y_star: DVector<f64>,
    pub u_star: DVector<f64>,
    pub omega_star: DVector<f64>,
    /// ‖ξ* − (Aξ* + Bu*)‖ at termination.
    pub residual: f64,
}

/// Locates the fixed point by running the noiseless recursion from the
/// canonical initialization at ω⁰ = 0 until ‖ξ⁺ − ξ‖ < tol·(1 + ‖ξ‖).
pub fn fixed_point(
    real: &Realization,
    fam: &ObjectiveFamily,
    tol: f64,
    max_iter: usize,
) -> Result<FixedPoint> {
    let mut xi = canonical_init(real, fam, &DVector::zeros(real.n))?;
    for it in 0..max_iter {
        let next = real.step(fam, &xi)?;
        let delta = (&next - &xi).norm();
        let norm = next.norm();
        if norm > 1e12 {
            return Err(Error::Divergence { step: it, norm });
        }
        xi = next;
        if delta < tol * (1.0 + norm) {
            let y_star = real.y(&xi);
            let u_star = fam.gradient(&y_star)?;
            let residual = (&real.a * &xi + &real.b * &u_star - &xi).norm();
            return Ok(FixedPoint {
                y_star,
                omega_star: real.omega(&xi),
                u_star,
                xi_star: xi,
                residual,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        residual: f64::NAN,
    })
}

/// Fixed point with the default tolerance 1e-12 and a 10⁶-step cap.
pub fn fixed_point_default(real: &Realization, fam: &ObjectiveFamily) -> Result<FixedPoint> {
    fixed_point(real, fam, 1e-12, 1_000_000)
}

/// Direct fixed-point solve for pure quadratic families, where the gradient
/// is affine: u = D(C_y ξ) − d. Solves (I − A − B·D·C_y) ξ* = −B·d.
///
/// Quadratic gradients make the stationarity equations linear but singular
/// along the invariant directions, so the solve is regularized by appending
/// F_ξ ξ* = 0, which selects the same fixed point the recursion reaches.
pub fn fixed_point_direct(real: &Realization, fam: &ObjectiveFamily) -> Result<FixedPoint> {
    if !fam.is_quadratic() {
        return Err(Error::InvalidParam {
            name: "family",
            reason: "direct fixed-point solve requires a pure quadratic family".into(),
        });
    }
    let n = real.n;
    let dim = real.state_dim();
    // ∇J_k(y) = 2a_k·y − 2a_k·b_k: slope from the sector (m_k = L_k = 2a_k),
    // offset from the gradient at zero.
    let slopes = fam.sector().m_bar();
    let offset = -fam.gradient(&DVector::zeros(n))?;
    let system = DMatrix::identity(dim, dim) - &real.a - &real.b * &slopes * &real.c_y;
    let rhs = &real.b * -&offset;
    // Stack the invariant rows to pin the solution on the invariant manifold.
    let q = real.f_xi.nrows();
    let mut lhs = DMatrix::zeros(dim + q, dim);
    lhs.view_mut((0, 0), (dim, dim)).copy_from(&system);
    lhs.view_mut((dim, 0), (q, dim)).copy_from(&real.f_xi);
    let mut full_rhs = DVector::zeros(dim + q);
    full_rhs.rows_mut(0, dim).copy_from(&rhs);
    let svd = lhs.svd(true, true);
    let xi = svd
        .solve(&full_rhs, 1e-12)
        .map_err(|e| Error::SolverFailure(e.to_string()))?;
    let y_star = real.y(&xi);
    let u_star = fam.gradient(&y_star)?;
    let residual = (&real.a * &xi + &real.b * &u_star - &xi).norm();
    Ok(FixedPoint {
        y_star,
        omega_star: real.omega(&xi),
        u_star,
        xi_star: xi,
        residual,
    })
}

/// True when the invariant rows annihilate the noise input path, i.e.
/// F_ξ·B ≈ 0, so the invariant is preserved even under additive noise.
pub fn noise_preserves_invariant(real: &Realization) -> bool {
    let scale = real.f_xi.amax().max(1e-300) * real.b.amax().max(1.0);
    (&real.f_xi * &real.b).amax() <= 1e-12 * scale
}

/// Maximum invariant residual max_t ‖F_ξ ξ^t + F_u u^t‖ along a sequence of
/// states, with u^t recomputed from y^t = C_y ξ^t.
pub fn invariant_residual(
    real: &Realization,
    fam: &ObjectiveFamily,
    states: &[DVector<f64>],
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for xi in states {
        let u = fam.gradient(&real.y(xi))?;
        let r = (&real.f_xi * xi + &real.f_u * u).norm();
        worst = worst.max(r);
    }
    Ok(worst)
}
