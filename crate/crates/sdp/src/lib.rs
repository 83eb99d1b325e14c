//! Small dense semidefinite programming by a log-det barrier interior-point
//! method.
//!
//! Problems are given as a linear objective over x ∈ ℝᵐ subject to
//! block-diagonal linear matrix inequalities F_b(x) = C_b + Σ_j x_j A_{b,j} ⪯ 0.
//! Two entry points:
//!
//! * [`max_margin`]: maximize m subject to F_b(x) + mI ⪯ 0. A positive
//!   optimum proves strict feasibility; the barrier duality gap turns the
//!   achieved margin into a rigorous upper bound on the best possible margin,
//!   so a small upper bound is a certificate that no sufficiently interior
//!   point exists.
//! * [`minimize`]: minimize cᵀx from a strictly feasible start by the
//!   classical barrier path-following scheme (Newton inner loop, multiplic-
//!   ative barrier parameter updates, gap bound ν/t).
//!
//! Everything is dense and sized for constraint blocks of a few dozen rows,
//! which is the regime the certification LMIs live in.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

pub mod external;

/// Which engine performs the solve. The external variant shells out to a
/// conic solver speaking the line protocol documented in [`external`]; its
/// answers are always re-validated here before being trusted.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub enum Backend {
    #[default]
    Internal,
    External(String),
}

#[derive(Debug, Error)]
pub enum SdpError {
    #[error("initial point is not strictly feasible: {0}")]
    NotStrictlyFeasible(String),
    #[error("numerical breakdown: {0}")]
    NumericalBreakdown(String),
    #[error("malformed problem: {0}")]
    BadProblem(String),
}

pub type Result<T> = std::result::Result<T, SdpError>;

/// One constraint block F_b(x) = constant + Σ terms[j].1 · x_{terms[j].0} ⪯ 0.
/// All matrices must be symmetric and share `dim`.
#[derive(Debug, Clone)]
pub struct LmiBlock {
    pub dim: usize,
    pub constant: DMatrix<f64>,
    pub terms: Vec<(usize, DMatrix<f64>)>,
}

impl LmiBlock {
    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (j, a) in &self.terms {
            let xj = x[*j];
            out.iter_mut().zip(a.iter()).for_each(|(o, &v)| *o += xj * v);
        }
        out
    }
}

/// minimize objective · x subject to every block ⪯ 0.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub n_vars: usize,
    pub objective: DVector<f64>,
    pub blocks: Vec<LmiBlock>,
}

impl SdpProblem {
    pub fn feasibility(n_vars: usize, blocks: Vec<LmiBlock>) -> Self {
        Self {
            n_vars,
            objective: DVector::zeros(n_vars),
            blocks,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.objective.len() != self.n_vars {
            return Err(SdpError::BadProblem(format!(
                "objective has {} entries for {} variables",
                self.objective.len(),
                self.n_vars
            )));
        }
        if self.blocks.is_empty() {
            return Err(SdpError::BadProblem("no constraint blocks".into()));
        }
        for (bi, b) in self.blocks.iter().enumerate() {
            if b.constant.shape() != (b.dim, b.dim) {
                return Err(SdpError::BadProblem(format!(
                    "block {bi}: constant shape {:?} vs dim {}",
                    b.constant.shape(),
                    b.dim
                )));
            }
            for (j, a) in &b.terms {
                if *j >= self.n_vars {
                    return Err(SdpError::BadProblem(format!(
                        "block {bi}: variable index {j} out of range"
                    )));
                }
                if a.shape() != (b.dim, b.dim) {
                    return Err(SdpError::BadProblem(format!(
                        "block {bi}: term shape {:?} vs dim {}",
                        a.shape(),
                        b.dim
                    )));
                }
            }
        }
        Ok(())
    }

    /// Total barrier parameter ν = Σ block dims; the duality gap at barrier
    /// parameter t is bounded by ν/t.
    pub fn nu(&self) -> f64 {
        self.blocks.iter().map(|b| b.dim as f64).sum()
    }

    /// Largest eigenvalue over blocks of F_b(x): negative iff strictly
    /// feasible, and −max_eig is the feasibility margin of x.
    pub fn max_eig(&self, x: &DVector<f64>) -> f64 {
        self.blocks
            .iter()
            .map(|b| b.eval(x).symmetric_eigen().eigenvalues.max())
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

#[derive(Debug, Clone)]
pub struct SolveOpts {
    /// Absolute duality-gap target ν/t.
    pub gap_tol: f64,
    /// Newton decrement target inside one barrier stage.
    pub newton_tol: f64,
    pub max_newton_per_stage: usize,
    pub max_stages: usize,
    pub t_init: f64,
    pub t_factor: f64,
    /// Early exit for margin maximization: stop once the margin exceeds this.
    pub target_margin: Option<f64>,
    /// Ceiling on the auxiliary margin variable. Margin maximization is
    /// unbounded for problems whose feasible set contains arbitrarily deep
    /// points (e.g. anything positively homogeneous without a normalization
    /// constraint); the cap keeps those solves finite. Margins at the cap
    /// mean "at least this deep".
    pub margin_cap: f64,
    /// Box |x_j| <= var_bound imposed on every variable. Barrier methods
    /// need a bounded feasible set (otherwise the analytic center escapes
    /// along recession directions); the box makes that unconditional. All
    /// optimality and infeasibility statements are relative to the box, so
    /// it should dwarf the expected solution scale.
    pub var_bound: f64,
    /// Hard cap on total Newton iterations across all barrier stages; the
    /// solve returns unconverged when it runs out.
    pub newton_budget: Option<usize>,
}

impl Default for SolveOpts {
    fn default() -> Self {
        Self {
            gap_tol: 1e-8,
            newton_tol: 1e-7,
            max_newton_per_stage: 120,
            max_stages: 60,
            t_init: 1.0,
            t_factor: 10.0,
            target_margin: None,
            margin_cap: 1e3,
            var_bound: 1e6,
            newton_budget: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MarginReport {
    pub x: DVector<f64>,
    /// Achieved feasibility margin (F_b(x) ⪯ −margin·I for all blocks).
    pub margin: f64,
    /// Rigorous upper bound on the best achievable margin (margin + gap).
    pub margin_upper_bound: f64,
    /// False when the solver stalled before closing the gap; the achieved
    /// margin is still valid, the upper bound is not.
    pub converged: bool,
    pub newton_iters: usize,
}

#[derive(Debug, Clone)]
pub struct MinimizeReport {
    pub x: DVector<f64>,
    pub objective: f64,
    /// Bound on suboptimality at termination.
    pub gap: f64,
    pub converged: bool,
    pub newton_iters: usize,
}

/// Appends the scalar blocks of the variable box |x_j| <= r.
fn append_box(blocks: &mut Vec<LmiBlock>, n_vars: usize, r: f64) {
    for j in 0..n_vars {
        for sign in [1.0, -1.0] {
            blocks.push(LmiBlock {
                dim: 1,
                constant: DMatrix::from_element(1, 1, -r),
                terms: vec![(j, DMatrix::from_element(1, 1, sign))],
            });
        }
    }
}

/// Cholesky factors of the slacks S_b = −F_b(x) for a strictly feasible x.
fn factor_slacks(prob: &SdpProblem, x: &DVector<f64>) -> Option<Vec<Cholesky<f64, Dyn>>> {
    let mut out = Vec::with_capacity(prob.blocks.len());
    for b in &prob.blocks {
        let s = -b.eval(x);
        out.push(Cholesky::new(s)?);
    }
    Some(out)
}

fn log_det_sum(chols: &[Cholesky<f64, Dyn>]) -> f64 {
    chols
        .iter()
        .map(|c| 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>())
        .sum()
}

/// One Newton step of t·cᵀx − Σ log det(−F_b(x)) at the point whose slack
/// factors are given; returns the step and the squared Newton decrement.
fn newton_step(
    prob: &SdpProblem,
    t: f64,
    chols: &[Cholesky<f64, Dyn>],
) -> Result<(DVector<f64>, f64)> {
    let m = prob.n_vars;
    let vec_len: usize = prob.blocks.iter().map(|b| b.dim * b.dim).sum();
    // Rows of v hold vec(L⁻¹ A_{b,j} L⁻ᵀ) stacked over blocks; the Hessian
    // is then the Gram matrix v·vᵀ and the gradient reads off the traces.
    let mut v = DMatrix::<f64>::zeros(m, vec_len);
    let mut grad = prob.objective.clone() * t;
    let mut col_off = 0;
    for (b, chol) in prob.blocks.iter().zip(chols) {
        let l = chol.l();
        for (j, a) in &b.terms {
            let half = l
                .solve_lower_triangular(a)
                .ok_or_else(|| SdpError::NumericalBreakdown("singular slack factor".into()))?;
            let w = l
                .solve_lower_triangular(&half.transpose())
                .ok_or_else(|| SdpError::NumericalBreakdown("singular slack factor".into()))?;
            grad[*j] += w.trace();
            let mut row = v.row_mut(*j);
            for (k, val) in w.iter().enumerate() {
                row[col_off + k] += *val;
            }
        }
        col_off += b.dim * b.dim;
    }
    let mut hess = &v * v.transpose();

    let mut ridge = 0.0;
    let base = hess.diagonal().iter().fold(0.0f64, |a, &d| a.max(d)) * 1e-14 + 1e-300;
    loop {
        match Cholesky::new(hess.clone()) {
            Some(ch) => {
                let step = ch.solve(&(-&grad));
                let dec_sq = -grad.dot(&step);
                return Ok((step, dec_sq.max(0.0)));
            }
            None => {
                ridge = if ridge == 0.0 { base } else { ridge * 100.0 };
                if ridge > base * 1e12 {
                    return Err(SdpError::NumericalBreakdown(
                        "Newton system not positive definite".into(),
                    ));
                }
                for i in 0..m {
                    hess[(i, i)] += ridge;
                }
            }
        }
    }
}

/// Barrier stages at increasing t from a strictly feasible x0.
/// `stop_early` is probed after every accepted Newton step.
fn barrier_path(
    prob: &SdpProblem,
    mut x: DVector<f64>,
    opts: &SolveOpts,
    mut stop_early: impl FnMut(&DVector<f64>) -> bool,
) -> Result<(DVector<f64>, f64, bool, usize)> {
    let nu = prob.nu();
    let mut chols = factor_slacks(prob, &x).ok_or_else(|| {
        SdpError::NotStrictlyFeasible("barrier start has a singular or indefinite slack".into())
    })?;
    let mut t = opts.t_init;
    let mut iters = 0;
    for _stage in 0..opts.max_stages {
        let mut centered = false;
        for _ in 0..opts.max_newton_per_stage {
            let (step, dec_sq) = newton_step(prob, t, &chols)?;
            if dec_sq <= opts.newton_tol * opts.newton_tol {
                centered = true;
                break;
            }
            // Backtrack to stay strictly feasible and decrease the merit.
            let merit = t * prob.objective.dot(&x) - log_det_sum(&chols);
            let slope = -dec_sq;
            let step_norm = step.norm();
            let alpha_floor = 1e-18 * (x.norm() + 1.0) / (step_norm + 1e-300);
            let mut alpha = 1.0;
            let mut accepted = false;
            while alpha > alpha_floor.min(1e-4) {
                let cand = &x + &step * alpha;
                if let Some(c) = factor_slacks(prob, &cand) {
                    let cand_merit = t * prob.objective.dot(&cand) - log_det_sum(&c);
                    if cand_merit <= merit + 0.25 * alpha * slope {
                        x = cand;
                        chols = c;
                        accepted = true;
                        break;
                    }
                }
                alpha *= 0.5;
            }
            iters += 1;
            if !accepted {
                // Line search stalled: the current point is as centered as
                // floating point allows at this t.
                break;
            }
            if stop_early(&x) {
                return Ok((x, nu / t, false, iters));
            }
            if opts.newton_budget.is_some_and(|b| iters >= b) {
                return Ok((x, nu / t, false, iters));
            }
        }
        // The gap bound nu/t only holds near the central path, so require a
        // centered stage before trusting it.
        if centered && nu / t <= opts.gap_tol {
            return Ok((x, nu / t, true, iters));
        }
        t *= opts.t_factor;
    }
    Ok((x, nu / t, false, iters))
}

/// Maximizes the joint feasibility margin m over (x, m) with F_b(x) + mI ⪯ 0,
/// starting from x = x0 (or zero) which need not be feasible.
pub fn max_margin(
    prob: &SdpProblem,
    x0: Option<&DVector<f64>>,
    opts: &SolveOpts,
) -> Result<MarginReport> {
    max_margin_via(prob, x0, opts, &Backend::Internal)
}

/// [`max_margin`] with an explicit solve engine.
pub fn max_margin_via(
    prob: &SdpProblem,
    x0: Option<&DVector<f64>>,
    opts: &SolveOpts,
    backend: &Backend,
) -> Result<MarginReport> {
    prob.validate()?;
    let m = prob.n_vars;
    let x_init = match x0 {
        Some(v) => {
            if v.len() != m {
                return Err(SdpError::BadProblem(format!(
                    "x0 has {} entries for {} variables",
                    v.len(),
                    m
                )));
            }
            v.clone()
        }
        None => DVector::zeros(m),
    };

    // Augment with the margin variable: every block gains + m·I, and the
    // margin itself is capped to keep homogeneous problems bounded.
    let cap = opts
        .margin_cap
        .max(opts.target_margin.unwrap_or(0.0) * 4.0)
        .max(1e-6);
    let worst = prob.max_eig(&x_init);
    let m_init = (-worst - 1.0).min(0.5 * cap);
    let mut blocks = prob.blocks.clone();
    for b in &mut blocks {
        b.terms.push((m, DMatrix::identity(b.dim, b.dim)));
    }
    blocks.push(LmiBlock {
        dim: 1,
        constant: DMatrix::from_element(1, 1, -cap),
        terms: vec![(m, DMatrix::from_element(1, 1, 1.0))],
    });
    let r = opts
        .var_bound
        .max(2.0 * cap)
        .max(2.0 * (m_init.abs() + 1.0))
        .max(2.0 * x_init.amax());
    append_box(&mut blocks, m + 1, r);
    let mut objective = DVector::zeros(m + 1);
    objective[m] = -1.0;
    let aug = SdpProblem {
        n_vars: m + 1,
        objective,
        blocks,
    };

    let mut x = DVector::zeros(m + 1);
    x.rows_mut(0, m).copy_from(&x_init);
    x[m] = m_init;

    if let Backend::External(cmd) = backend {
        let sol = external::solve(&aug, cmd)?;
        // Never trust the child process: recompute the margin of the point
        // it returned against the original blocks.
        let x_ext = sol.rows(0, m).into_owned();
        let margin = -prob.max_eig(&x_ext);
        return Ok(MarginReport {
            x: x_ext,
            margin,
            // An external solve carries no self-certifying gap bound.
            margin_upper_bound: f64::INFINITY,
            converged: false,
            newton_iters: 0,
        });
    }

    let target = opts.target_margin;
    let (x, gap, converged, iters) = barrier_path(&aug, x, opts, |x| {
        target.map(|tm| x[x.len() - 1] >= tm).unwrap_or(false)
    })?;
    let margin = x[m];
    Ok(MarginReport {
        x: x.rows(0, m).into_owned(),
        margin,
        margin_upper_bound: margin + gap,
        converged: converged || target.map(|tm| margin >= tm).unwrap_or(false),
        newton_iters: iters,
    })
}

/// Minimizes the problem objective from a strictly feasible start.
pub fn minimize(prob: &SdpProblem, x0: &DVector<f64>, opts: &SolveOpts) -> Result<MinimizeReport> {
    minimize_via(prob, x0, opts, &Backend::Internal)
}

/// [`minimize`] with an explicit solve engine.
pub fn minimize_via(
    prob: &SdpProblem,
    x0: &DVector<f64>,
    opts: &SolveOpts,
    backend: &Backend,
) -> Result<MinimizeReport> {
    prob.validate()?;
    if x0.len() != prob.n_vars {
        return Err(SdpError::BadProblem(format!(
            "x0 has {} entries for {} variables",
            x0.len(),
            prob.n_vars
        )));
    }
    let mut boxed = prob.clone();
    append_box(
        &mut boxed.blocks,
        prob.n_vars,
        opts.var_bound.max(2.0 * x0.amax() + 1.0),
    );
    if factor_slacks(prob, x0).is_none() {
        return Err(SdpError::NotStrictlyFeasible(
            "minimize requires a strictly feasible start".into(),
        ));
    }
    if let Backend::External(cmd) = backend {
        let x = external::solve(prob, cmd)?;
        if factor_slacks(prob, &x).is_none() {
            return Err(SdpError::NumericalBreakdown(
                "external solver returned an infeasible point".into(),
            ));
        }
        return Ok(MinimizeReport {
            objective: prob.objective.dot(&x),
            x,
            gap: f64::INFINITY,
            converged: false,
            newton_iters: 0,
        });
    }
    let (x, gap, converged, iters) = barrier_path(&boxed, x0.clone(), opts, |_| false)?;
    Ok(MinimizeReport {
        objective: prob.objective.dot(&x),
        x,
        gap,
        converged,
        newton_iters: iters,
    })
}

/// Index map for the upper triangle of a symmetric d×d matrix variable,
/// ordered (0,0), (0,1), …, (0,d−1), (1,1), …: the layout the LMI assembly
/// and certificate extraction agree on.
#[derive(Debug, Clone, Copy)]
pub struct SymIndex {
    pub d: usize,
}

impl SymIndex {
    pub fn len(&self) -> usize {
        self.d * (self.d + 1) / 2
    }

    pub fn is_empty(&self) -> bool {
        self.d == 0
    }

    /// Variable index of entry (i, j), i ≤ j.
    pub fn idx(&self, i: usize, j: usize) -> usize {
        debug_assert!(i <= j && j < self.d);
        i * self.d - i * (i + 1) / 2 + j
    }

    /// Iterates (var index, i, j) over the upper triangle.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        (0..self.d).flat_map(move |i| (i..self.d).map(move |j| (self.idx(i, j), i, j)))
    }

    /// Reconstructs the symmetric matrix from a variable slice.
    pub fn unpack(&self, x: &DVector<f64>, offset: usize) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.d, self.d);
        for (k, i, j) in self.iter() {
            out[(i, j)] = x[offset + k];
            out[(j, i)] = x[offset + k];
        }
        out
    }
}
