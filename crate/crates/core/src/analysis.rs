//! Worst-case certification.
//!
//! Turns an extended system (algorithm + quadratic-constraint filters) into
//! semidefinite feasibility problems whose solutions certify a geometric
//! convergence rate ρ, or bound the stationary noise sensitivity γ. The
//! multiplier matrix P and the constraint weights λ together form a
//! checkable certificate; [`verify_certificate`] re-derives the inequality
//! from scratch and checks eigenvalues, independently of the solver path.

use nalgebra::{DMatrix, DVector, RowDVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::algorithms::{build, fixed_point_default, AlgParams, Algorithm, Realization};
use crate::error::{Error, Result};
use crate::iqc::{extend_opts, off_by_one_iqc, sector_iqc, ExtendedSystem, IqcFilter};
use crate::objectives::{ObjectiveFamily, SectorBounds};
use crate::subspace_gossip::{GossipMatrix, Subspace};
use distopt_sdp::{
    max_margin_via, minimize_via, Backend, LmiBlock, SdpProblem, SolveOpts, SymIndex,
};

/// How the weighting rate ρ̄ of the rate-weighted constraint is chosen at
/// each probed ρ. `Rho` tracks the probe (the strongest sound choice),
/// `Zero` degenerates the constraint to its memoryless form (useful when the
/// same extended system must serve several ρ), `Custom` pins a value, which
/// is only sound for probes with ρ ≥ that value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RhoBarPolicy {
    Rho,
    Zero,
    Custom(f64),
}

impl RhoBarPolicy {
    pub fn resolve(&self, rho: f64) -> f64 {
        match self {
            RhoBarPolicy::Rho => rho.min(1.0),
            RhoBarPolicy::Zero => 0.0,
            RhoBarPolicy::Custom(v) => *v,
        }
    }
}

/// Which quadratic constraints describe the gradient class.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IqcConfig {
    pub sector: bool,
    pub off_by_one: bool,
    pub rho_bar: RhoBarPolicy,
    /// Split every constraint into one multiplier per agent.
    pub per_agent: bool,
}

impl Default for IqcConfig {
    fn default() -> Self {
        Self {
            sector: true,
            off_by_one: true,
            rho_bar: RhoBarPolicy::Rho,
            per_agent: false,
        }
    }
}

/// Instantiates the configured filters for a probe at rate `rho`.
pub fn build_filters(sec: &SectorBounds, cfg: &IqcConfig, rho: f64) -> Result<Vec<IqcFilter>> {
    let mut filters = Vec::new();
    if cfg.sector {
        filters.push(sector_iqc(sec));
    }
    if cfg.off_by_one {
        filters.push(off_by_one_iqc(sec, cfg.rho_bar.resolve(rho))?);
    }
    if filters.is_empty() {
        return Err(Error::InvalidParam {
            name: "iqc_config",
            reason: "at least one constraint family must be enabled".into(),
        });
    }
    Ok(filters)
}

#[derive(Debug, Clone)]
pub struct AnalysisOpts {
    /// Strictness margin as a fraction of the assembled coefficient scale.
    pub margin_scale: f64,
    /// Duality-gap target for the interior-point solves.
    pub gap_tol: f64,
    pub bisect_tol: f64,
    pub rho_lo: f64,
    pub rho_hi: f64,
    /// The downward bracket extension stops here.
    pub rho_floor: f64,
    /// Per-probe Newton cap; a probe that runs out counts as undetermined,
    /// which the bisection treats as the infeasible side (conservative).
    pub newton_budget: Option<usize>,
    pub backend: Backend,
}

impl Default for AnalysisOpts {
    fn default() -> Self {
        Self {
            margin_scale: 1e-9,
            gap_tol: 1e-8,
            bisect_tol: 1e-3,
            rho_lo: 0.3,
            rho_hi: 1.0 - 1e-6,
            rho_floor: 1e-3,
            newton_budget: Some(2000),
            backend: Backend::Internal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CertKind {
    Rate,
    Sensitivity,
}

/// Eigenvalue re-check of a certificate, computed directly from the
/// extended system without going through the solver's problem encoding.
#[derive(Debug, Clone)]
pub struct VerifyReport {
    pub max_eig_lmi: f64,
    pub lmi_scale: f64,
    pub min_eig_p: f64,
    pub p_scale: f64,
    pub min_lambda: f64,
    pub ok: bool,
}

#[derive(Debug, Clone)]
pub struct Certificate {
    pub kind: CertKind,
    /// ρ for rate certificates, γ for sensitivity certificates.
    pub bound: f64,
    pub p: DMatrix<f64>,
    pub lambdas: Vec<f64>,
    /// Transient amplification √(λmax(P)/λmin(P)).
    pub c: f64,
    /// Strictness achieved at acceptance: the inequality holds ⪯ −margin·I.
    pub margin: f64,
    pub verify: VerifyReport,
}

/// Outcome of one feasibility probe, distinguishing a proof of
/// infeasibility (duality bound below the required margin) from a solve
/// that merely failed to find a point.
#[derive(Debug, Clone)]
pub enum Feasibility {
    Certified(Certificate),
    ProvenInfeasible { margin_upper_bound: f64 },
    Undetermined { best_margin: f64, detail: String },
}

impl Feasibility {
    pub fn certificate(self) -> Option<Certificate> {
        match self {
            Feasibility::Certified(c) => Some(c),
            _ => None,
        }
    }
}

/// Orthonormal basis of the null space of [F_ξ 0 F_u], padded between the
/// state and input coordinates by the filter states (which are
/// unconstrained). Returns the identity when there is no constraint.
pub fn nullspace_basis(
    f_xi: &DMatrix<f64>,
    f_u: &DMatrix<f64>,
    n_psi_total: usize,
) -> DMatrix<f64> {
    let q = f_xi.nrows();
    let n_state = f_xi.ncols();
    let n = f_u.ncols();
    let cols = n_state + n_psi_total + n;
    if q == 0 || (f_xi.amax() == 0.0 && (f_u.is_empty() || f_u.amax() == 0.0)) {
        return DMatrix::identity(cols, cols);
    }
    let mut f = DMatrix::zeros(q, cols);
    f.view_mut((0, 0), (q, n_state)).copy_from(f_xi);
    f.view_mut((0, n_state + n_psi_total), (q, n)).copy_from(f_u);
    let gram = f.transpose() * &f;
    let eig = gram.symmetric_eigen();
    let tol = eig.eigenvalues.amax() * 1e-12;
    let keep: Vec<usize> = (0..cols).filter(|&i| eig.eigenvalues[i] <= tol).collect();
    let mut h = DMatrix::zeros(cols, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        h.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    h
}

/// The assembled semidefinite problem for one (system, ρ) pair:
/// variables are the upper triangle of P followed by the multipliers λ.
struct Assembly {
    prob: SdpProblem,
    sym: SymIndex,
    n_lambda: usize,
    /// Largest coefficient magnitude in the main inequality block; margins
    /// and strictness thresholds are expressed relative to it.
    coeff_scale: f64,
}

fn sym_basis(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut e = DMatrix::zeros(d, d);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn assemble(ext: &ExtendedSystem, rho: f64, penalty: bool, trace_cap: Option<f64>) -> Assembly {
    let d = ext.state_dim();
    let n = ext.n;
    let sym = SymIndex { d };
    let n_lambda = ext.m_blocks.len();
    let n_vars = sym.len() + n_lambda;

    let h = nullspace_basis(&ext.f_xi, &ext.f_u, ext.n_psi_total);
    let hc = h.ncols();

    // The inequality is Hᵀ(JᵀPJ − ρ²KᵀPK + Σλᵢ Qᵢ (+ penalty))H ⪯ 0 with
    // J = [Â B̂] and K = [I 0]; precompute the mapped bases JH and KH so
    // each coefficient is a pair of row outer products.
    let mut j_full = DMatrix::zeros(d, d + n);
    j_full.view_mut((0, 0), (d, d)).copy_from(&ext.a_hat);
    j_full.view_mut((0, d), (d, n)).copy_from(&ext.b_hat);
    let jh = &j_full * &h;
    let kh = h.rows(0, d).into_owned();
    let mut cd = DMatrix::zeros(ext.z_len, d + n);
    cd.view_mut((0, 0), (ext.z_len, d)).copy_from(&ext.c_hat);
    cd.view_mut((0, d), (ext.z_len, n)).copy_from(&ext.d_hat);
    let cdh = &cd * &h;

    let j_rows: Vec<RowDVector<f64>> = (0..d).map(|i| jh.row(i).into_owned()).collect();
    let k_rows: Vec<RowDVector<f64>> = (0..d).map(|i| kh.row(i).into_owned()).collect();

    let g_const = if penalty {
        let ch = &ext.c_omega * h.rows(0, ext.n_state);
        ch.transpose() * &ch
    } else {
        DMatrix::zeros(hc, hc)
    };

    let mut g_terms: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(n_vars);
    let rho_sq = rho * rho;
    for (k, i, j) in sym.iter() {
        // Coefficient of the basis element e_i e_jᵀ + e_j e_iᵀ (or e_i e_iᵀ
        // on the diagonal) under P ↦ Hᵀ(JᵀPJ − ρ²KᵀPK)H.
        let base = j_rows[i].transpose() * &j_rows[j]
            - (k_rows[i].transpose() * &k_rows[j]) * rho_sq;
        let coeff = if i == j {
            base
        } else {
            &base + base.transpose()
        };
        g_terms.push((k, coeff));
    }
    for (r, (m, off)) in ext.m_blocks.iter().enumerate() {
        let sub = cdh.rows(*off, m.nrows());
        let q = sub.transpose() * m * sub;
        let q = (&q + q.transpose()) * 0.5;
        g_terms.push((sym.len() + r, q));
    }

    let coeff_scale = g_terms
        .iter()
        .map(|(_, m)| m.amax())
        .fold(g_const.amax(), f64::max)
        .max(1.0);

    let mut blocks = vec![LmiBlock {
        dim: hc,
        constant: g_const,
        terms: g_terms,
    }];

    // P ⪰ 0.
    let p_terms: Vec<(usize, DMatrix<f64>)> =
        sym.iter().map(|(k, i, j)| (k, -sym_basis(d, i, j))).collect();
    blocks.push(LmiBlock {
        dim: d,
        constant: DMatrix::zeros(d, d),
        terms: p_terms,
    });

    // λ ⪰ 0, one scalar block each.
    for r in 0..n_lambda {
        blocks.push(LmiBlock {
            dim: 1,
            constant: DMatrix::zeros(1, 1),
            terms: vec![(sym.len() + r, DMatrix::from_element(1, 1, -1.0))],
        });
    }

    // Normalization tr(P) ≤ cap: the inequality is homogeneous in (P, λ),
    // so margins are only meaningful at a pinned scale.
    if let Some(cap) = trace_cap {
        let terms = (0..d)
            .map(|i| (sym.idx(i, i), DMatrix::from_element(1, 1, 1.0)))
            .collect();
        blocks.push(LmiBlock {
            dim: 1,
            constant: DMatrix::from_element(1, 1, -cap),
            terms,
        });
    }

    Assembly {
        prob: SdpProblem::feasibility(n_vars, blocks),
        sym,
        n_lambda,
        coeff_scale,
    }
}

fn sdp_err(e: distopt_sdp::SdpError) -> Error {
    Error::SolverFailure(e.to_string())
}

fn extract(asm: &Assembly, x: &DVector<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let p = asm.sym.unpack(x, 0);
    let lambdas = (0..asm.n_lambda).map(|r| x[asm.sym.len() + r]).collect();
    (p, lambdas)
}

fn conditioning(p: &DMatrix<f64>) -> f64 {
    let eig = p.clone().symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        f64::INFINITY
    } else {
        (hi / lo).sqrt()
    }
}

/// One feasibility probe of the rate inequality at a fixed ρ.
pub fn rate_feasibility(ext: &ExtendedSystem, rho: f64, opts: &AnalysisOpts) -> Result<Feasibility> {
    rate_feasibility_warm(ext, rho, opts, None)
}

/// [`rate_feasibility`] with a starting point, typically the (P, λ) of a
/// certificate found at a nearby ρ. The start does not have to be feasible.
pub fn rate_feasibility_warm(
    ext: &ExtendedSystem,
    rho: f64,
    opts: &AnalysisOpts,
    x0: Option<&DVector<f64>>,
) -> Result<Feasibility> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParam {
            name: "rho",
            reason: format!("probe rate {rho} outside (0, 1]"),
        });
    }
    for f in &ext.filters {
        if let Some(rb) = f.rho_bar {
            if rb > rho + 1e-12 {
                return Err(Error::InvalidRhoBar(rb));
            }
        }
    }
    let asm = assemble(ext, rho, false, Some(ext.state_dim() as f64));
    if let Some(x) = x0 {
        if x.len() != asm.prob.n_vars {
            return Err(Error::InvalidParam {
                name: "x0",
                reason: format!(
                    "start has {} entries, the probe has {} variables",
                    x.len(),
                    asm.prob.n_vars
                ),
            });
        }
    }
    let eps = opts.margin_scale * asm.coeff_scale;
    let sopts = SolveOpts {
        gap_tol: opts.gap_tol.min(eps),
        target_margin: Some(2.0 * eps),
        newton_budget: opts.newton_budget,
        ..SolveOpts::default()
    };
    let rep = match max_margin_via(&asm.prob, x0, &sopts, &opts.backend) {
        Ok(rep) => rep,
        Err(e) => {
            return Ok(Feasibility::Undetermined {
                best_margin: f64::NEG_INFINITY,
                detail: e.to_string(),
            })
        }
    };
    if rep.margin >= eps {
        let (p, lambdas) = extract(&asm, &rep.x);
        let c = conditioning(&p);
        let mut cert = Certificate {
            kind: CertKind::Rate,
            bound: rho,
            p,
            lambdas,
            c,
            margin: rep.margin,
            verify: VerifyReport {
                max_eig_lmi: 0.0,
                lmi_scale: 0.0,
                min_eig_p: 0.0,
                p_scale: 0.0,
                min_lambda: 0.0,
                ok: false,
            },
        };
        cert.verify = verify_certificate(ext, &cert);
        Ok(Feasibility::Certified(cert))
    } else if rep.converged && rep.margin_upper_bound < eps {
        Ok(Feasibility::ProvenInfeasible {
            margin_upper_bound: rep.margin_upper_bound,
        })
    } else {
        Ok(Feasibility::Undetermined {
            best_margin: rep.margin,
            detail: "margin neither reached the strictness target nor was bounded below it"
                .into(),
        })
    }
}

/// Thin wrapper treating anything but a certificate as "not feasible".
pub fn rate_lmi_feasible(
    ext: &ExtendedSystem,
    rho: f64,
    opts: &AnalysisOpts,
) -> Result<Option<Certificate>> {
    Ok(rate_feasibility(ext, rho, opts)?.certificate())
}

fn state_nullspace(f_xi: &DMatrix<f64>, n_state: usize) -> DMatrix<f64> {
    if f_xi.nrows() == 0 || f_xi.amax() == 0.0 {
        return DMatrix::identity(n_state, n_state);
    }
    let gram = f_xi.transpose() * f_xi;
    let eig = gram.symmetric_eigen();
    let tol = eig.eigenvalues.amax() * 1e-12;
    let keep: Vec<usize> = (0..n_state)
        .filter(|&i| eig.eigenvalues[i] <= tol)
        .collect();
    let mut h = DMatrix::zeros(n_state, keep.len());
    for (c, &i) in keep.iter().enumerate() {
        h.column_mut(c).copy_from(&eig.eigenvectors.column(i));
    }
    h
}

/// Largest closed-loop spectral radius over sampled quadratic objectives
/// with per-agent slopes at the sector bounds. Every sample is a realizable
/// instance whose error dynamics are exactly linear, so its decay rate is a
/// floor under any certifiable ρ; [`certify_rate`] uses this to skip probes
/// that a counterexample already settles. The spectrum is taken on the
/// algorithm's invariant manifold (the affine set actual trajectories live
/// on), which the closed loop maps into itself.
pub fn worst_quadratic_rate(real: &Realization, sec: &SectorBounds) -> f64 {
    let n = real.n;
    let basis = state_nullspace(&real.f_xi, real.state_dim());
    let mut worst = 0.0f64;
    let mut check = |slopes: &DVector<f64>| {
        let a_cl = &real.a + &real.b * DMatrix::from_diagonal(slopes) * &real.c_y;
        let restricted = basis.transpose() * a_cl * &basis;
        for z in restricted.complex_eigenvalues().iter() {
            worst = worst.max(z.norm());
        }
    };
    if n <= 5 {
        for mask in 0..(1usize << n) {
            check(&DVector::from_fn(n, |k, _| {
                if mask >> k & 1 == 1 {
                    sec.l_of(k)
                } else {
                    sec.m_of(k)
                }
            }));
        }
    } else {
        check(&DVector::from_fn(n, |k, _| sec.m_of(k)));
        check(&DVector::from_fn(n, |k, _| sec.l_of(k)));
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        for _ in 0..40 {
            check(&DVector::from_fn(n, |k, _| {
                if rng.gen::<bool>() {
                    sec.l_of(k)
                } else {
                    sec.m_of(k)
                }
            }));
        }
    }
    worst
}

/// Packs a certificate's (P, λ) back into solver variable order, for use as
/// a warm start at a nearby ρ.
fn pack_point(p: &DMatrix<f64>, lambdas: &[f64]) -> DVector<f64> {
    let sym = SymIndex { d: p.nrows() };
    let mut x = DVector::zeros(sym.len() + lambdas.len());
    for (k, i, j) in sym.iter() {
        x[k] = p[(i, j)];
    }
    for (r, l) in lambdas.iter().enumerate() {
        x[sym.len() + r] = *l;
    }
    x
}

#[derive(Debug, Clone)]
pub struct RateCertification {
    pub rho: f64,
    pub certificate: Certificate,
    pub probes: usize,
}

/// Bisects for the smallest certifiable rate, rebuilding the rate-weighted
/// filters at every probe according to the ρ̄ policy.
pub fn certify_rate(
    real: &Realization,
    sec: &SectorBounds,
    cfg: &IqcConfig,
    opts: &AnalysisOpts,
) -> Result<RateCertification> {
    // Realizable decay floor from explicit quadratic instances: probes below
    // it are settled by counterexample, without a solve.
    let realizable = worst_quadratic_rate(real, sec);
    let mut probes = 0usize;
    let mut warm: Option<DVector<f64>> = None;
    let probe = |rho: f64,
                 probes: &mut usize,
                 warm: &mut Option<DVector<f64>>|
     -> Result<Option<Certificate>> {
        *probes += 1;
        if rho < realizable {
            return Ok(None);
        }
        if let RhoBarPolicy::Custom(rb) = cfg.rho_bar {
            if rb > rho {
                // The pinned weighting rate is unsound below itself; treat
                // such probes as not certifiable rather than erroring out.
                return Ok(None);
            }
        }
        let filters = build_filters(sec, cfg, rho)?;
        let ext = extend_opts(real, &filters, cfg.per_agent)?;
        match rate_feasibility_warm(&ext, rho, opts, warm.as_ref())?.certificate() {
            Some(cert) => {
                *warm = Some(pack_point(&cert.p, &cert.lambdas));
                Ok(Some(cert))
            }
            None => Ok(None),
        }
    };

    let hi = opts.rho_hi;
    if realizable > hi {
        return Err(Error::InfeasibleAtUpper { rho_hi: hi });
    }
    let mut hi = hi;
    let mut best = match probe(hi, &mut probes, &mut warm)? {
        Some(cert) => cert,
        None => return Err(Error::InfeasibleAtUpper { rho_hi: hi }),
    };

    let mut lo = opts.rho_lo.max(realizable - opts.bisect_tol).min(hi);
    if lo < hi {
        if let Some(cert) = probe(lo, &mut probes, &mut warm)? {
            // Feasible at the bottom of the bracket: extend downward by
            // halving until an infeasible probe (or the floor) is found.
            hi = lo;
            best = cert;
            loop {
                let next = lo * 0.5;
                if next < opts.rho_floor {
                    return Ok(RateCertification {
                        rho: hi,
                        certificate: best,
                        probes,
                    });
                }
                match probe(next, &mut probes, &mut warm)? {
                    Some(cert) => {
                        hi = next;
                        best = cert;
                        lo = next;
                    }
                    None => {
                        lo = next;
                        break;
                    }
                }
            }
        }
    }

    while hi - lo > opts.bisect_tol {
        let mid = 0.5 * (hi + lo);
        match probe(mid, &mut probes, &mut warm)? {
            Some(cert) => {
                hi = mid;
                best = cert;
            }
            None => lo = mid,
        }
    }
    Ok(RateCertification {
        rho: hi,
        certificate: best,
        probes,
    })
}

#[derive(Debug, Clone)]
pub struct SensitivityCertification {
    pub gamma: f64,
    pub certificate: Certificate,
    /// Suboptimality bound on γ² at termination (∞ when delegated).
    pub gap: f64,
}

/// Minimizes the certified stationary error power tr(R BᵀP₁₁B) subject to
/// the sensitivity inequality at ρ = 1, and returns γ = √optimum.
pub fn certify_sensitivity(
    real: &Realization,
    sec: &SectorBounds,
    cfg: &IqcConfig,
    r: &DMatrix<f64>,
    opts: &AnalysisOpts,
) -> Result<SensitivityCertification> {
    if r.nrows() != real.n || r.ncols() != real.n {
        return Err(Error::DimensionMismatch {
            context: "noise covariance bound",
            expected: real.n,
            got: r.nrows().max(r.ncols()),
        });
    }
    let scale = r.amax().max(1e-300);
    if (r - r.transpose()).amax() > 1e-9 * scale {
        return Err(Error::InvalidParam {
            name: "r",
            reason: "covariance bound must be symmetric".into(),
        });
    }
    if r.clone().symmetric_eigen().eigenvalues.min() < -1e-9 * scale {
        return Err(Error::InvalidParam {
            name: "r",
            reason: "covariance bound must be positive semidefinite".into(),
        });
    }

    let filters = build_filters(sec, cfg, 1.0)?;
    let ext = extend_opts(real, &filters, cfg.per_agent)?;
    let mut asm = assemble(&ext, 1.0, true, None);

    // Objective tr(R BᵀP₁₁B) = tr(P Q) with Q = B_noise R B_noiseᵀ.
    let q = &ext.b_noise * r * ext.b_noise.transpose();
    let mut objective = DVector::zeros(asm.prob.n_vars);
    for (k, i, j) in asm.sym.iter() {
        objective[k] = if i == j { q[(i, i)] } else { 2.0 * q[(i, j)] };
    }
    asm.prob.objective = objective;

    let eps = opts.margin_scale * asm.coeff_scale;
    let phase1_opts = SolveOpts {
        gap_tol: opts.gap_tol.min(eps),
        target_margin: Some(2.0 * eps),
        ..SolveOpts::default()
    };
    let start = max_margin_via(&asm.prob, None, &phase1_opts, &opts.backend).map_err(sdp_err)?;
    if start.margin < eps {
        return Err(Error::Infeasible(format!(
            "sensitivity inequality has no strict interior (margin {:.3e} < {:.3e})",
            start.margin, eps
        )));
    }

    let phase2_opts = SolveOpts {
        gap_tol: opts.gap_tol,
        ..SolveOpts::default()
    };
    let sol = minimize_via(&asm.prob, &start.x, &phase2_opts, &opts.backend).map_err(sdp_err)?;
    let (p, lambdas) = extract(&asm, &sol.x);
    let gamma_sq = (&p * &q).trace().max(0.0);
    let gamma = gamma_sq.sqrt();
    let c = conditioning(&p);
    let margin = -asm.prob.max_eig(&sol.x);
    let mut cert = Certificate {
        kind: CertKind::Sensitivity,
        bound: gamma,
        p,
        lambdas,
        c,
        margin,
        verify: VerifyReport {
            max_eig_lmi: 0.0,
            lmi_scale: 0.0,
            min_eig_p: 0.0,
            p_scale: 0.0,
            min_lambda: 0.0,
            ok: false,
        },
    };
    cert.verify = verify_certificate(&ext, &cert);
    Ok(SensitivityCertification {
        gamma,
        certificate: cert,
        gap: sol.gap,
    })
}

/// Re-derives the certified inequality directly from the extended system at
/// the certificate's (P, λ) and checks its eigenvalues, along with P ⪰ 0
/// and λ ≥ 0. Deliberately avoids the solver's encoding.
pub fn verify_certificate(ext: &ExtendedSystem, cert: &Certificate) -> VerifyReport {
    let (rho, penalty) = match cert.kind {
        CertKind::Rate => (cert.bound, false),
        CertKind::Sensitivity => (1.0, true),
    };
    let d = ext.state_dim();
    let n = ext.n;
    let p = &cert.p;

    let mut big = DMatrix::zeros(d + n, d + n);
    let pa = p * &ext.a_hat;
    let pb = p * &ext.b_hat;
    big.view_mut((0, 0), (d, d))
        .copy_from(&(ext.a_hat.transpose() * &pa - p * (rho * rho)));
    big.view_mut((0, d), (d, n))
        .copy_from(&(ext.a_hat.transpose() * &pb));
    big.view_mut((d, 0), (n, d))
        .copy_from(&(ext.b_hat.transpose() * &pa));
    big.view_mut((d, d), (n, n))
        .copy_from(&(ext.b_hat.transpose() * &pb));

    let mut cd = DMatrix::zeros(ext.z_len, d + n);
    cd.view_mut((0, 0), (ext.z_len, d)).copy_from(&ext.c_hat);
    cd.view_mut((0, d), (ext.z_len, n)).copy_from(&ext.d_hat);
    for ((m, off), lam) in ext.m_blocks.iter().zip(&cert.lambdas) {
        let sub = cd.rows(*off, m.nrows());
        big += (sub.transpose() * m * sub) * *lam;
    }

    if penalty {
        let ctc = ext.c_omega.transpose() * &ext.c_omega;
        let mut topleft = big.view_mut((0, 0), (ext.n_state, ext.n_state));
        topleft += ctc;
    }

    let big = (&big + big.transpose()) * 0.5;
    let h = nullspace_basis(&ext.f_xi, &ext.f_u, ext.n_psi_total);
    let reduced = h.transpose() * &big * &h;
    let reduced = (&reduced + reduced.transpose()) * 0.5;

    let max_eig_lmi = reduced.symmetric_eigen().eigenvalues.max();
    let lmi_scale = big.amax().max(1.0);
    let min_eig_p = p.clone().symmetric_eigen().eigenvalues.min();
    let p_scale = p.amax().max(1.0);
    let min_lambda = cert.lambdas.iter().copied().fold(f64::INFINITY, f64::min);
    let ok = max_eig_lmi <= 1e-7 * lmi_scale
        && min_eig_p >= -1e-9 * p_scale
        && min_lambda >= -1e-12;
    VerifyReport {
        max_eig_lmi,
        lmi_scale,
        min_eig_p,
        p_scale,
        min_lambda,
        ok,
    }
}

/// Geometric grid from lo to hi inclusive.
pub fn log_grid(lo: f64, hi: f64, points: usize) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidParam {
            name: "grid",
            reason: format!("need 0 < lo < hi, got [{lo}, {hi}]"),
        });
    }
    if points < 2 {
        return Err(Error::InvalidParam {
            name: "points",
            reason: "need at least two grid points".into(),
        });
    }
    let ratio = (hi / lo).ln() / (points - 1) as f64;
    Ok((0..points)
        .map(|i| {
            if i == points - 1 {
                hi
            } else {
                lo * (ratio * i as f64).exp()
            }
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct SweepPoint {
    pub mu: f64,
    pub rho: Option<f64>,
    pub gamma: Option<f64>,
    pub feasible: bool,
    /// Distance from the constrained optimum to the method's fixed point,
    /// when a concrete objective was supplied.
    pub bias: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct SweepResult {
    pub algorithm: Algorithm,
    pub sigma: f64,
    pub points: Vec<SweepPoint>,
    /// First grid μ at which both certified figures are strictly worse than
    /// at the previous feasible grid point.
    pub knee_mu: Option<f64>,
    pub has_bias: bool,
}

impl SweepResult {
    pub fn csv(&self) -> String {
        let mut out = String::from("algorithm,mu,rho_certified,gamma_certified,feasible");
        if self.has_bias {
            out.push_str(",bias");
        }
        out.push('\n');
        for p in &self.points {
            let fmt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{}",
                self.algorithm.name(),
                p.mu,
                fmt(p.rho),
                fmt(p.gamma),
                p.feasible
            ));
            if self.has_bias {
                out.push(',');
                out.push_str(&fmt(p.bias));
            }
            out.push('\n');
        }
        out
    }
}

fn knee_of(points: &[SweepPoint]) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for p in points {
        let (Some(rho), Some(gamma)) = (p.rho, p.gamma) else {
            continue;
        };
        if let Some((pr, pg)) = prev {
            if rho > pr && gamma > pg {
                return Some(p.mu);
            }
        }
        prev = Some((rho, gamma));
    }
    None
}

/// Certifies rate and sensitivity across a step-size grid.
#[allow(clippy::too_many_arguments)]
pub fn tradeoff_sweep(
    algorithm: Algorithm,
    gossip: &GossipMatrix,
    sub: &Subspace,
    template: &AlgParams,
    mu_grid: &[f64],
    sec: &SectorBounds,
    cfg: &IqcConfig,
    r: &DMatrix<f64>,
    bias_ref: Option<(&ObjectiveFamily, &DVector<f64>)>,
    opts: &AnalysisOpts,
) -> Result<SweepResult> {
    if mu_grid.is_empty() {
        return Err(Error::InvalidParam {
            name: "mu_grid",
            reason: "empty step-size grid".into(),
        });
    }
    let mut grid = mu_grid.to_vec();
    grid.sort_by(|a, b| a.partial_cmp(b).expect("step sizes must not be NaN"));
    if grid[0] <= 0.0 {
        return Err(Error::InvalidParam {
            name: "mu_grid",
            reason: "step sizes must be positive".into(),
        });
    }

    let points: Vec<SweepPoint> = grid
        .par_iter()
        .map(|&mu| -> Result<SweepPoint> {
            let params = AlgParams { mu, ..*template };
            let real = build(algorithm, gossip, sub, params)?;
            let rho = match certify_rate(&real, sec, cfg, opts) {
                Ok(rc) => Some(rc.rho),
                Err(Error::InfeasibleAtUpper { .. }) | Err(Error::SolverFailure(_)) => None,
                Err(e) => return Err(e),
            };
            let gamma = match certify_sensitivity(&real, sec, cfg, r, opts) {
                Ok(sc) => Some(sc.gamma),
                Err(Error::Infeasible(_)) | Err(Error::SolverFailure(_)) => None,
                Err(e) => return Err(e),
            };
            let bias = bias_ref.and_then(|(fam, omega_opt)| {
                fixed_point_default(&real, fam)
                    .ok()
                    .map(|fp| (omega_opt - &fp.omega_star).norm())
            });
            Ok(SweepPoint {
                mu,
                feasible: rho.is_some() && gamma.is_some(),
                rho,
                gamma,
                bias,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(SweepResult {
        algorithm,
        sigma: gossip.sigma(),
        knee_mu: knee_of(&points),
        has_bias: bias_ref.is_some(),
        points,
    })
}
