//! Quadratic constraints satisfied by sector-bounded gradient maps: a static
//! (pointwise) filter and a one-step-memory ρ-hard filter, their assembly
//! into the extended algorithm-plus-filter system the certification LMIs are
//! written over, and direct trajectory checks of the constraint inequalities.

use nalgebra::{DMatrix, DVector};

use crate::algorithms::{FixedPoint, Realization};
use crate::error::{Error, Result};
use crate::objectives::{ObjectiveFamily, SectorBounds};

/// Trajectory-check pass threshold, relative to signal energy.
pub const IQC_CHECK_TOL: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IqcKind {
    /// The quadratic form is nonnegative at every step.
    Pointwise,
    /// Partial sums weighted by ρ^{−2t} are nonnegative.
    RhoHard,
}

/// One quadratic constraint: filter state-space (ψ⁺ = A_Ψψ + B_Ψ^y y + B_Ψ^u u,
/// z = C_Ψψ + D_Ψ^y y + D_Ψ^u u) plus the symmetric middle matrix M.
#[derive(Debug, Clone)]
pub struct IqcFilter {
    pub kind: IqcKind,
    /// Number of agents n; z has 2n rows for both filters here.
    pub n: usize,
    pub n_psi: usize,
    pub a_psi: DMatrix<f64>,
    pub b_psi_y: DMatrix<f64>,
    pub b_psi_u: DMatrix<f64>,
    pub c_psi: DMatrix<f64>,
    pub d_psi_y: DMatrix<f64>,
    pub d_psi_u: DMatrix<f64>,
    pub m: DMatrix<f64>,
    /// Decay weight ρ̄ of the ρ-hard filter; valid for certifying any ρ ≥ ρ̄.
    pub rho_bar: Option<f64>,
}

impl IqcFilter {
    pub fn z_len(&self) -> usize {
        self.m.nrows()
    }

    /// Stationary filter state ψ* = (I − A_Ψ)⁻¹(B_Ψ^y y* + B_Ψ^u u*).
    pub fn psi_star(&self, y_star: &DVector<f64>, u_star: &DVector<f64>) -> DVector<f64> {
        if self.n_psi == 0 {
            return DVector::zeros(0);
        }
        let rhs = &self.b_psi_y * y_star + &self.b_psi_u * u_star;
        (DMatrix::identity(self.n_psi, self.n_psi) - &self.a_psi)
            .lu()
            .solve(&rhs)
            .expect("I − A_Ψ is invertible for these filters")
    }
}

/// Static sector constraint: z = [L̄y − u; −m̄y + u], M = [0, I; I, 0], so
/// z̃ᵀMz̃ = 2(L̄ỹ − ũ)ᵀ(ũ − m̄ỹ) ≥ 0 pointwise for gradients in the sector.
pub fn sector_iqc(sec: &SectorBounds) -> IqcFilter {
    let n = sec.n_agents();
    let (m_bar, l_bar) = (sec.m_bar(), sec.l_bar());
    let i = DMatrix::<f64>::identity(n, n);
    let mut d_psi_y = DMatrix::zeros(2 * n, n);
    d_psi_y.view_mut((0, 0), (n, n)).copy_from(&l_bar);
    d_psi_y.view_mut((n, 0), (n, n)).copy_from(&(-&m_bar));
    let mut d_psi_u = DMatrix::zeros(2 * n, n);
    d_psi_u.view_mut((0, 0), (n, n)).copy_from(&(-&i));
    d_psi_u.view_mut((n, 0), (n, n)).copy_from(&i);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, n), (n, n)).copy_from(&i);
    m.view_mut((n, 0), (n, n)).copy_from(&i);
    IqcFilter {
        kind: IqcKind::Pointwise,
        n,
        n_psi: 0,
        a_psi: DMatrix::zeros(0, 0),
        b_psi_y: DMatrix::zeros(0, n),
        b_psi_u: DMatrix::zeros(0, n),
        c_psi: DMatrix::zeros(2 * n, 0),
        d_psi_y,
        d_psi_u,
        m,
        rho_bar: None,
    }
}

/// Off-by-one constraint: the filter remembers ψ⁺ = −L̄y + u, and
/// z = [ρ̄²ψ + L̄y − u; −m̄y + u] satisfies the ρ-hard inequality for any
/// certification rate ρ ≥ ρ̄.
pub fn off_by_one_iqc(sec: &SectorBounds, rho_bar: f64) -> Result<IqcFilter> {
    if !(0.0..=1.0).contains(&rho_bar) {
        return Err(Error::InvalidRhoBar(rho_bar));
    }
    let n = sec.n_agents();
    let (m_bar, l_bar) = (sec.m_bar(), sec.l_bar());
    let i = DMatrix::<f64>::identity(n, n);
    let mut c_psi = DMatrix::zeros(2 * n, n);
    c_psi
        .view_mut((0, 0), (n, n))
        .copy_from(&(&i * (rho_bar * rho_bar)));
    let mut d_psi_y = DMatrix::zeros(2 * n, n);
    d_psi_y.view_mut((0, 0), (n, n)).copy_from(&l_bar);
    d_psi_y.view_mut((n, 0), (n, n)).copy_from(&(-&m_bar));
    let mut d_psi_u = DMatrix::zeros(2 * n, n);
    d_psi_u.view_mut((0, 0), (n, n)).copy_from(&(-&i));
    d_psi_u.view_mut((n, 0), (n, n)).copy_from(&i);
    let mut m = DMatrix::zeros(2 * n, 2 * n);
    m.view_mut((0, n), (n, n)).copy_from(&i);
    m.view_mut((n, 0), (n, n)).copy_from(&i);
    Ok(IqcFilter {
        kind: IqcKind::RhoHard,
        n,
        n_psi: n,
        a_psi: DMatrix::zeros(n, n),
        b_psi_y: -l_bar,
        b_psi_u: i,
        c_psi,
        d_psi_y,
        d_psi_u,
        m,
        rho_bar: Some(rho_bar),
    })
}

/// Algorithm dynamics augmented with the filter states of one or more IQCs:
/// ξ̂ = [ξ; ψ₁; …], Â = [A, 0; B_Ψ^yC_y, A_Ψ], B̂ = [B; B_Ψ^u],
/// Ĉ = [D_Ψ^yC_y, C_Ψ], D̂ = D_Ψ^u; noise enters through [B; 0].
#[derive(Debug, Clone)]
pub struct ExtendedSystem {
    pub n: usize,
    /// Algorithm state size n·n_alg (the leading block of ξ̂ and of P).
    pub n_state: usize,
    pub n_psi_total: usize,
    pub z_len: usize,
    pub a_hat: DMatrix<f64>,
    pub b_hat: DMatrix<f64>,
    pub c_hat: DMatrix<f64>,
    pub d_hat: DMatrix<f64>,
    pub b_noise: DMatrix<f64>,
    /// One (M_i, row offset into z) pair per multiplier λ_i.
    pub m_blocks: Vec<(DMatrix<f64>, usize)>,
    /// Carried through unchanged for the LMI assembly.
    pub c_omega: DMatrix<f64>,
    pub f_xi: DMatrix<f64>,
    pub f_u: DMatrix<f64>,
    pub filters: Vec<IqcFilter>,
}

impl ExtendedSystem {
    pub fn state_dim(&self) -> usize {
        self.n_state + self.n_psi_total
    }

    /// Stationary extended state [ξ*; ψ₁*; …].
    pub fn xi_hat_star(&self, fp: &FixedPoint) -> DVector<f64> {
        let mut out = DVector::zeros(self.state_dim());
        out.rows_mut(0, self.n_state).copy_from(&fp.xi_star);
        let mut off = self.n_state;
        for f in &self.filters {
            if f.n_psi > 0 {
                out.rows_mut(off, f.n_psi)
                    .copy_from(&f.psi_star(&fp.y_star, &fp.u_star));
                off += f.n_psi;
            }
        }
        out
    }

    /// Stationary constraint output z* = Ĉξ̂* + D̂u*.
    pub fn z_star(&self, fp: &FixedPoint) -> DVector<f64> {
        &self.c_hat * self.xi_hat_star(fp) + &self.d_hat * &fp.u_star
    }
}

/// Per-agent multiplier splitting: replaces a filter's single M (one λ) with
/// n copies masked to agent k's row pair {k, n+k}, giving one λ per agent.
fn per_agent_masks(m: &DMatrix<f64>, n: usize) -> Vec<DMatrix<f64>> {
    (0..n)
        .map(|k| {
            let rows = [k, n + k];
            let mut out = DMatrix::zeros(m.nrows(), m.ncols());
            for &r in &rows {
                for &c in &rows {
                    out[(r, c)] = m[(r, c)];
                }
            }
            out
        })
        .collect()
}

pub fn extend(real: &Realization, filters: &[IqcFilter]) -> Result<ExtendedSystem> {
    extend_opts(real, filters, false)
}

/// `per_agent = true` splits every filter's multiplier into one per agent.
pub fn extend_opts(
    real: &Realization,
    filters: &[IqcFilter],
    per_agent: bool,
) -> Result<ExtendedSystem> {
    if filters.is_empty() {
        return Err(Error::InvalidParam {
            name: "filters",
            reason: "need at least one quadratic constraint".into(),
        });
    }
    for f in filters {
        if f.n != real.n {
            return Err(Error::DimensionMismatch {
                context: "filter agents vs realization",
                expected: real.n,
                got: f.n,
            });
        }
    }
    let n = real.n;
    let n_state = real.state_dim();
    let n_psi_total: usize = filters.iter().map(|f| f.n_psi).sum();
    let z_len: usize = filters.iter().map(|f| f.z_len()).sum();
    let dim = n_state + n_psi_total;

    let mut a_hat = DMatrix::zeros(dim, dim);
    a_hat.view_mut((0, 0), (n_state, n_state)).copy_from(&real.a);
    let mut b_hat = DMatrix::zeros(dim, n);
    b_hat.view_mut((0, 0), (n_state, n)).copy_from(&real.b);
    let mut c_hat = DMatrix::zeros(z_len, dim);
    let mut d_hat = DMatrix::zeros(z_len, n);
    let mut m_blocks = Vec::new();

    let mut psi_off = n_state;
    let mut z_off = 0;
    for f in filters {
        if f.n_psi > 0 {
            a_hat
                .view_mut((psi_off, 0), (f.n_psi, n_state))
                .copy_from(&(&f.b_psi_y * &real.c_y));
            a_hat
                .view_mut((psi_off, psi_off), (f.n_psi, f.n_psi))
                .copy_from(&f.a_psi);
            b_hat
                .view_mut((psi_off, 0), (f.n_psi, n))
                .copy_from(&f.b_psi_u);
            c_hat
                .view_mut((z_off, psi_off), (f.z_len(), f.n_psi))
                .copy_from(&f.c_psi);
        }
        c_hat
            .view_mut((z_off, 0), (f.z_len(), n_state))
            .copy_from(&(&f.d_psi_y * &real.c_y));
        d_hat
            .view_mut((z_off, 0), (f.z_len(), n))
            .copy_from(&f.d_psi_u);
        if per_agent {
            for mask in per_agent_masks(&f.m, n) {
                m_blocks.push((mask, z_off));
            }
        } else {
            m_blocks.push((f.m.clone(), z_off));
        }
        psi_off += f.n_psi;
        z_off += f.z_len();
    }

    let mut b_noise = DMatrix::zeros(dim, n);
    b_noise.view_mut((0, 0), (n_state, n)).copy_from(&real.b);

    Ok(ExtendedSystem {
        n,
        n_state,
        n_psi_total,
        z_len,
        a_hat,
        b_hat,
        c_hat,
        d_hat,
        b_noise,
        m_blocks,
        c_omega: real.c_omega.clone(),
        f_xi: real.f_xi.clone(),
        f_u: real.f_u.clone(),
        filters: filters.to_vec(),
    })
}

/// Result of checking one constraint along one trajectory.
#[derive(Debug, Clone)]
pub struct IqcReport {
    /// min over t of z̃ᵀMz̃.
    pub min_form: f64,
    /// min over T of the discounted partial sums S̃_T = ρ²S̃_{T−1} + z̃ᵀMz̃,
    /// which share their signs with the ρ^{−2t}-weighted sums but stay
    /// bounded on long trajectories.
    pub min_partial: f64,
    /// max over t of ‖z̃^t‖².
    pub scale: f64,
    /// max over T of the equally discounted energy Σ ρ^{2(T−t)}‖z̃^t‖².
    pub scale_partial: f64,
    pub pass_pointwise: bool,
    pub pass_rho_hard: bool,
    /// Pass verdict for the filter's own kind.
    pub ok: bool,
}

/// Runs `filter` alongside a recorded state sequence (ψ⁰ = ψ*) and evaluates
/// the constraint forms on z̃ = z − z*.
pub fn check_iqc(
    filter: &IqcFilter,
    real: &Realization,
    fam: &ObjectiveFamily,
    states: &[DVector<f64>],
    fp: &FixedPoint,
    rho: f64,
) -> Result<IqcReport> {
    if !(rho > 0.0 && rho <= 1.0) {
        return Err(Error::InvalidParam {
            name: "rho",
            reason: format!("must lie in (0, 1], got {rho}"),
        });
    }
    let mut psi = filter.psi_star(&fp.y_star, &fp.u_star);
    let z_star = &filter.c_psi * &psi + &filter.d_psi_y * &fp.y_star + &filter.d_psi_u * &fp.u_star;
    let rho2 = rho * rho;

    let mut min_form = f64::INFINITY;
    let mut min_partial = f64::INFINITY;
    let mut scale: f64 = 0.0;
    let mut scale_partial: f64 = 0.0;
    let mut input_sq: f64 = 0.0;
    let mut sum = 0.0;
    let mut energy = 0.0;
    let psi_star = psi.clone();
    for xi in states {
        let y = real.y(xi);
        let u = fam.gradient(&y)?;
        let z = &filter.c_psi * &psi + &filter.d_psi_y * &y + &filter.d_psi_u * &u;
        let zt = z - &z_star;
        let form = zt.dot(&(&filter.m * &zt));
        let e = zt.norm_squared();
        min_form = min_form.min(form);
        scale = scale.max(e);
        input_sq = input_sq.max(
            (&y - &fp.y_star).norm_squared()
                + (&u - &fp.u_star).norm_squared()
                + (&psi - &psi_star).norm_squared(),
        );
        sum = rho2 * sum + form;
        energy = rho2 * energy + e;
        min_partial = min_partial.min(sum);
        scale_partial = scale_partial.max(energy);
        psi = &filter.a_psi * psi + &filter.b_psi_y * y + &filter.b_psi_u * u;
    }

    // When the sector is degenerate (m̄ = L̄), z̃ itself is pure round-off and
    // max ‖z̃‖² cannot anchor a relative test; floor the tolerance at the
    // squared round-off level of the filter inputs instead.
    let coeff = filter
        .d_psi_y
        .amax()
        .max(filter.d_psi_u.amax())
        .max(filter.c_psi.amax())
        .max(1.0);
    let floor = (1e-13 * coeff) * (1e-13 * coeff) * input_sq * filter.z_len() as f64;
    let pass_pointwise = min_form >= -(IQC_CHECK_TOL * scale + floor).max(1e-300);
    let pass_rho_hard = min_partial >= -(IQC_CHECK_TOL * scale_partial + floor).max(1e-300);
    Ok(IqcReport {
        min_form,
        min_partial,
        scale,
        scale_partial,
        pass_pointwise,
        pass_rho_hard,
        ok: match filter.kind {
            IqcKind::Pointwise => pass_pointwise,
            IqcKind::RhoHard => pass_rho_hard,
        },
    })
}
