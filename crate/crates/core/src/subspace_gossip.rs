//! Constraint geometry and gossip matrices.
//!
//! A subspace constraint is given by a full-column-rank basis 𝒰 ∈ ℝ^{n×q}
//! with orthogonal projector 𝒫 = 𝒰(𝒰ᵀ𝒰)⁻¹𝒰ᵀ. A gossip matrix 𝒜 is a
//! symmetric matrix whose powers converge to 𝒫, which holds iff
//!
//! ```text
//! 𝒜𝒫 = 𝒫,   𝒫𝒜 = 𝒫,   ‖𝒜 − 𝒫‖ < 1.
//! ```
//!
//! The spectral gap σ = ‖𝒜 − 𝒫‖ governs how fast information mixes across
//! the network: ‖𝒜^t − 𝒫‖ = σ^t for symmetric 𝒜.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// A basis is rank-deficient when its smallest singular value falls below
/// this fraction of the largest.
pub const RANK_TOL: f64 = 1e-10;

/// Default tolerance on the two range conditions 𝒜𝒫 = 𝒫 and 𝒫𝒜 = 𝒫
/// (max elementwise residual).
pub const GOSSIP_EQ_TOL: f64 = 1e-9;

/// Symmetry tolerance for gossip matrices (max elementwise |𝒜 − 𝒜ᵀ|).
pub const SYMMETRY_TOL: f64 = 1e-12;

/// The contraction condition is enforced strictly: σ < 1 − this margin.
pub const CONTRACTION_MARGIN: f64 = 1e-12;

/// Largest singular value of a dense matrix.
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.max()
}

/// Orthogonal projector onto the column span of `basis`.
///
/// Fails with [`Error::RankDeficient`] when the smallest singular value of
/// `basis` is below [`RANK_TOL`] times the largest.
pub fn projection(basis: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = basis.clone().svd(false, false);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    let ratio = if s_max > 0.0 { s_min / s_max } else { 0.0 };
    if ratio < RANK_TOL {
        return Err(Error::RankDeficient {
            ratio,
            threshold: RANK_TOL,
        });
    }
    let gram = basis.transpose() * basis;
    let chol = gram.cholesky().ok_or(Error::RankDeficient {
        ratio,
        threshold: RANK_TOL,
    })?;
    let p = basis * chol.solve(&basis.transpose());
    // Symmetrize away the last few ulps of round-off.
    Ok((&p + p.transpose()) * 0.5)
}

/// A subspace constraint: basis 𝒰 and its cached projector 𝒫.
#[derive(Debug, Clone)]
pub struct Subspace {
    basis: DMatrix<f64>,
    projection: DMatrix<f64>,
}

impl Subspace {
    /// Builds the subspace from a full-column-rank basis.
    pub fn new(basis: DMatrix<f64>) -> Result<Self> {
        let projection = projection(&basis)?;
        Ok(Self { basis, projection })
    }

    /// The consensus subspace: all agents share one value (basis 1_n).
    pub fn consensus(n: usize) -> Self {
        Self::new(DMatrix::from_element(n, 1, 1.0)).expect("all-ones basis has full rank")
    }

    /// The unconstrained case: basis I_n, projector I_n.
    pub fn full(n: usize) -> Self {
        Self::new(DMatrix::identity(n, n)).expect("identity basis has full rank")
    }

    /// Ambient dimension n.
    pub fn n(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace dimension q.
    pub fn q(&self) -> usize {
        self.basis.ncols()
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn projection(&self) -> &DMatrix<f64> {
        &self.projection
    }

    /// Projector onto the orthogonal complement, I − 𝒫.
    pub fn complement(&self) -> DMatrix<f64> {
        DMatrix::identity(self.n(), self.n()) - &self.projection
    }
}

/// Outcome of validating a candidate gossip matrix.
#[derive(Debug, Clone)]
pub struct GossipReport {
    /// True iff every condition below holds.
    pub ok: bool,
    /// Spectral gap σ = ‖𝒜 − 𝒫‖.
    pub sigma: f64,
    /// max elementwise |𝒜𝒫 − 𝒫|.
    pub residual_ap: f64,
    /// max elementwise |𝒫𝒜 − 𝒫|.
    pub residual_pa: f64,
    /// max elementwise |𝒜 − 𝒜ᵀ|.
    pub residual_symmetry: f64,
    /// max |𝒜_ij| outside the prescribed edge set, when one was supplied.
    pub residual_sparsity: Option<f64>,
}

impl GossipReport {
    /// Lists every violated condition, or "ok".
    pub fn summary(&self, tol: f64) -> String {
        let mut failures = Vec::new();
        if self.residual_symmetry > SYMMETRY_TOL {
            failures.push(format!("asymmetric (residual {:.3e})", self.residual_symmetry));
        }
        if self.residual_ap > tol {
            failures.push(format!("AP != P (residual {:.3e})", self.residual_ap));
        }
        if self.residual_pa > tol {
            failures.push(format!("PA != P (residual {:.3e})", self.residual_pa));
        }
        if self.sigma >= 1.0 - CONTRACTION_MARGIN {
            failures.push(format!(
                "no contraction off the subspace (sigma = {:.6} >= 1)",
                self.sigma
            ));
        }
        if let Some(r) = self.residual_sparsity {
            if r > SYMMETRY_TOL {
                failures.push(format!("nonzero entries off the edge set (max {:.3e})", r));
            }
        }
        if failures.is_empty() {
            format!("ok (sigma = {:.6})", self.sigma)
        } else {
            failures.join("; ")
        }
    }
}

impl std::fmt::Display for GossipReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.summary(GOSSIP_EQ_TOL))
    }
}

/// Checks the three convergence conditions (and optionally a sparsity
/// pattern) for the candidate matrix `a` against subspace `sub`.
pub fn validate_gossip(a: &DMatrix<f64>, sub: &Subspace, tol: f64) -> Result<GossipReport> {
    validate_gossip_sparse(a, sub, tol, None)
}

/// As [`validate_gossip`], additionally requiring 𝒜_ij = 0 for i ≠ j off
/// the undirected edge set.
pub fn validate_gossip_sparse(
    a: &DMatrix<f64>,
    sub: &Subspace,
    tol: f64,
    edges: Option<&[(usize, usize)]>,
) -> Result<GossipReport> {
    let n = sub.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "gossip matrix vs subspace",
            expected: n,
            got: a.nrows().max(a.ncols()),
        });
    }
    let p = sub.projection();
    let residual_ap = (a * p - p).amax();
    let residual_pa = (p * a - p).amax();
    let residual_symmetry = (a - a.transpose()).amax();
    let sigma = spectral_norm(&(a - p));
    let residual_sparsity = edges.map(|es| {
        let allowed: std::collections::HashSet<(usize, usize)> = es
            .iter()
            .flat_map(|&(i, j)| [(i, j), (j, i)])
            .collect();
        let mut worst: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j && !allowed.contains(&(i, j)) {
                    worst = worst.max(a[(i, j)].abs());
                }
            }
        }
        worst
    });
    let ok = residual_symmetry <= SYMMETRY_TOL
        && residual_ap <= tol
        && residual_pa <= tol
        && sigma < 1.0 - CONTRACTION_MARGIN
        && residual_sparsity.is_none_or(|r| r <= SYMMETRY_TOL);
    Ok(GossipReport {
        ok,
        sigma,
        residual_ap,
        residual_pa,
        residual_symmetry,
        residual_sparsity,
    })
}

/// Spectral gap σ = ‖𝒜 − 𝒫‖ of a candidate matrix.
pub fn spectral_gap(a: &DMatrix<f64>, sub: &Subspace) -> Result<f64> {
    let n = sub.n();
    if a.nrows() != n || a.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "gossip matrix vs subspace",
            expected: n,
            got: a.nrows().max(a.ncols()),
        });
    }
    Ok(spectral_norm(&(a - sub.projection())))
}

/// A validated gossip matrix together with its spectral gap.
#[derive(Debug, Clone)]
pub struct GossipMatrix {
    matrix: DMatrix<f64>,
    spectral_gap: f64,
}

impl GossipMatrix {
    /// Validates `matrix` against `sub` with tolerance `tol` on the range
    /// conditions; wraps the failed report in [`Error::NotValidGossip`].
    pub fn new(matrix: DMatrix<f64>, sub: &Subspace, tol: f64) -> Result<Self> {
        Self::with_sparsity(matrix, sub, tol, None)
    }

    /// As [`GossipMatrix::new`] with an additional edge-set compliance check.
    pub fn with_sparsity(
        matrix: DMatrix<f64>,
        sub: &Subspace,
        tol: f64,
        edges: Option<&[(usize, usize)]>,
    ) -> Result<Self> {
        let report = validate_gossip_sparse(&matrix, sub, tol, edges)?;
        if !report.ok {
            return Err(Error::NotValidGossip(report.summary(tol)));
        }
        Ok(Self {
            matrix,
            spectral_gap: report.sigma,
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn sigma(&self) -> f64 {
        self.spectral_gap
    }

    pub fn n(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Graph Laplacian of an undirected unweighted graph on `n` nodes.
pub fn laplacian_from_edges(n: usize, edges: &[(usize, usize)]) -> DMatrix<f64> {
    let mut l = DMatrix::zeros(n, n);
    for &(i, j) in edges {
        l[(i, i)] += 1.0;
        l[(j, j)] += 1.0;
        l[(i, j)] -= 1.0;
        l[(j, i)] -= 1.0;
    }
    l
}

/// Builds the averaging matrix W = I − η·ℒ from a graph Laplacian and
/// validates it against the consensus subspace.
///
/// Requires 0 < η < 2/λ_max(ℒ); fails with [`Error::NotValidGossip`] when
/// the graph is disconnected (no contraction toward consensus).
pub fn consensus_gossip(laplacian: &DMatrix<f64>, eta: f64) -> Result<GossipMatrix> {
    let n = laplacian.nrows();
    if laplacian.ncols() != n {
        return Err(Error::DimensionMismatch {
            context: "laplacian",
            expected: n,
            got: laplacian.ncols(),
        });
    }
    if (laplacian - laplacian.transpose()).amax() > SYMMETRY_TOL {
        return Err(Error::InvalidParam {
            name: "laplacian",
            reason: "must be symmetric".into(),
        });
    }
    for i in 0..n {
        let row_sum: f64 = laplacian.row(i).sum();
        if row_sum.abs() > GOSSIP_EQ_TOL {
            return Err(Error::InvalidParam {
                name: "laplacian",
                reason: format!("row {i} sums to {row_sum:.3e}, expected 0"),
            });
        }
        for j in 0..n {
            if i != j && laplacian[(i, j)] > SYMMETRY_TOL {
                return Err(Error::InvalidParam {
                    name: "laplacian",
                    reason: format!("positive off-diagonal at ({i}, {j})"),
                });
            }
        }
    }
    let lambda_max = laplacian
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .max();
    if !(eta > 0.0 && (lambda_max == 0.0 || eta < 2.0 / lambda_max)) {
        return Err(Error::InvalidParam {
            name: "eta",
            reason: format!("must satisfy 0 < eta < 2/lambda_max = {:.6}", 2.0 / lambda_max),
        });
    }
    let w = DMatrix::identity(n, n) - laplacian * eta;
    GossipMatrix::new(w, &Subspace::consensus(n), GOSSIP_EQ_TOL)
}

/// Synthesizes a dense gossip matrix with a prescribed spectral gap:
/// 𝒜 = 𝒫 + Q where Q = (I−𝒫)·S·(I−𝒫) for a seeded random symmetric S,
/// rescaled so that ‖Q‖ = `target_sigma`.
///
/// Deterministic in (`sub`, `target_sigma`, `seed`).
pub fn synth_gossip(sub: &Subspace, target_sigma: f64, seed: u64) -> Result<GossipMatrix> {
    if !(0.0..1.0).contains(&target_sigma) {
        return Err(Error::InvalidParam {
            name: "target_sigma",
            reason: format!("{target_sigma} outside [0, 1)"),
        });
    }
    let n = sub.n();
    let p = sub.projection().clone();
    if target_sigma == 0.0 || sub.q() == n {
        return GossipMatrix::new(p, sub, GOSSIP_EQ_TOL);
    }
    let comp = sub.complement();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = DMatrix::zeros(n, n);
    // The complement has positive dimension here, so Q vanishes only on a
    // measure-zero set of draws; retry with a derived seed if it happens.
    for attempt in 0..8u64 {
        let mut g = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                g[(i, j)] = StandardNormal.sample(&mut rng);
            }
        }
        let s = (&g + g.transpose()) * 0.5;
        let raw = &comp * s * &comp;
        let raw = (&raw + raw.transpose()) * 0.5;
        let norm = spectral_norm(&raw);
        if norm > 1e-12 {
            q = raw * (target_sigma / norm);
            break;
        }
        rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(attempt + 1));
    }
    GossipMatrix::new(p + q, sub, GOSSIP_EQ_TOL)
}
