//! Trajectory execution with optional additive gradient noise, plus the
//! empirical counterparts of the certified quantities: a log-linear rate fit
//! and a steady-state sensitivity estimate over Monte Carlo replicas.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::algorithms::{canonical_init, invariant_residual, Algorithm, FixedPoint, Realization};
use crate::error::{Error, Result};
use crate::objectives::ObjectiveFamily;

/// A run is aborted with `Error::Divergence` once ‖ξ^t‖ exceeds this bound,
/// so that unstable (μ, σ) sweep points fail fast instead of overflowing.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Default central fraction of a trajectory used for the rate fit.
pub const RATE_FIT_WINDOW: f64 = 0.6;

/// Maximum RMS residual (natural-log units) for a rate fit to count as a
/// linear phase.
pub const RATE_FIT_RMS_TOL: f64 = 0.5;

/// Error floor below which the fit window is considered contaminated by
/// round-off rather than geometric decay.
pub const RATE_FLOOR: f64 = 1e-12;

const PSD_TOL: f64 = 1e-12;

/// Zero-mean Gaussian gradient noise with covariance `actual_cov` ⪯ `r`.
///
/// `r` is the bound the certificates are issued against; `actual_cov` is what
/// the simulator actually draws (defaults to `r`), kept separate so that the
/// bound can be exercised with any compliant distribution.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    r: DMatrix<f64>,
    actual_cov: DMatrix<f64>,
    sqrt_cov: DMatrix<f64>,
    seed: u64,
}

fn check_symmetric_psd(name: &'static str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() {
        return Err(Error::DimensionMismatch {
            context: "noise covariance",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let scale = m.amax().max(1.0);
    if (m - m.transpose()).amax() > PSD_TOL * scale {
        return Err(Error::InvalidParam {
            name,
            reason: "must be symmetric".into(),
        });
    }
    let min_eig = m
        .clone()
        .symmetric_eigen()
        .eigenvalues
        .min();
    if min_eig < -PSD_TOL * scale {
        return Err(Error::InvalidParam {
            name,
            reason: format!("must be positive semidefinite, min eigenvalue {min_eig:.3e}"),
        });
    }
    Ok(())
}

/// Symmetric PSD square root, with tiny negative eigenvalues clamped to zero.
fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = m.clone().symmetric_eigen();
    let mut d = eig.eigenvalues.clone();
    for v in d.iter_mut() {
        *v = v.max(0.0).sqrt();
    }
    &eig.eigenvectors * DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
}

impl NoiseModel {
    /// Noise bounded by (and drawn with) covariance `r`.
    pub fn new(r: DMatrix<f64>, seed: u64) -> Result<Self> {
        check_symmetric_psd("r", &r)?;
        let sqrt_cov = psd_sqrt(&r);
        Ok(Self {
            actual_cov: r.clone(),
            r,
            sqrt_cov,
            seed,
        })
    }

    /// R = σ_w² I: independent per-agent noise with standard deviation σ_w.
    pub fn isotropic(n: usize, sigma_w: f64, seed: u64) -> Result<Self> {
        if sigma_w < 0.0 || sigma_w.is_nan() {
            return Err(Error::InvalidParam {
                name: "sigma_w",
                reason: format!("must be nonnegative, got {sigma_w}"),
            });
        }
        Self::new(DMatrix::identity(n, n) * sigma_w * sigma_w, seed)
    }

    /// Replaces the drawn covariance; it must stay below the bound,
    /// eigenvalues of r − cov ≥ −1e-12 · scale.
    pub fn with_actual_cov(mut self, cov: DMatrix<f64>) -> Result<Self> {
        check_symmetric_psd("actual_cov", &cov)?;
        if cov.nrows() != self.r.nrows() {
            return Err(Error::DimensionMismatch {
                context: "actual_cov vs r",
                expected: self.r.nrows(),
                got: cov.nrows(),
            });
        }
        let gap = &self.r - &cov;
        let scale = self.r.amax().max(1.0);
        let min_eig = gap.symmetric_eigen().eigenvalues.min();
        if min_eig < -PSD_TOL * scale {
            return Err(Error::InvalidParam {
                name: "actual_cov",
                reason: format!(
                    "exceeds the bound r: min eigenvalue of r − actual_cov is {min_eig:.3e}"
                ),
            });
        }
        self.sqrt_cov = psd_sqrt(&cov);
        self.actual_cov = cov;
        Ok(self)
    }

    /// Same covariances, different stream.
    pub fn reseeded(&self, seed: u64) -> Self {
        let mut out = self.clone();
        out.seed = seed;
        out
    }

    pub fn r(&self) -> &DMatrix<f64> {
        &self.r
    }

    pub fn actual_cov(&self) -> &DMatrix<f64> {
        &self.actual_cov
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn n(&self) -> usize {
        self.r.nrows()
    }

    /// Draws w^t. Each step keys its own counter-mode stream, so draws are
    /// independent across iterations and random-access reproducible.
    pub fn draw(&self, t: usize) -> DVector<f64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(t as u64);
        let z = DVector::from_fn(self.n(), |_, _| StandardNormal.sample(&mut rng));
        &self.sqrt_cov * z
    }
}

/// Derives the seed of replica `k` from a base seed (splitmix-style mixing,
/// so neighbouring base seeds do not produce overlapping replica seeds).
pub fn replica_seed(base: u64, k: u64) -> u64 {
    let mut z = base ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Initial condition of a run.
#[derive(Debug, Clone)]
pub enum Init {
    /// Canonical block seeding from the network start ω⁰.
    Canonical(DVector<f64>),
    /// Explicit state vector; rejected unless it satisfies the algorithm's
    /// invariant at t = 0.
    Explicit(DVector<f64>),
    /// Start at the computed fixed point.
    AtFixedPoint,
}

/// Which bulky series to keep besides the error series.
#[derive(Debug, Clone, Copy)]
pub struct RecordOpts {
    pub states: bool,
    pub omega: bool,
}

impl Default for RecordOpts {
    fn default() -> Self {
        Self {
            states: false,
            omega: true,
        }
    }
}

/// One executed trajectory with its error series and run metadata.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub mu: f64,
    /// Gossip contraction factor of the realization that produced the run.
    pub sigma: f64,
    /// Noise seed; `None` for noiseless runs.
    pub seed: Option<u64>,
    pub noisy: bool,
    pub t_end: usize,
    /// ξ^t for t = 0..=t_end, when requested.
    pub states: Option<Vec<DVector<f64>>>,
    /// ω^t for t = 0..=t_end, when requested.
    pub omega: Option<Vec<DVector<f64>>>,
    /// ‖ω^t − ω^opt‖.
    pub err_opt: Vec<f64>,
    /// ‖ξ^t − ξ*‖.
    pub err_fp: Vec<f64>,
    /// ‖ω^t − ω*‖, the series the sensitivity measure is defined on.
    pub err_star: Vec<f64>,
}

impl Trajectory {
    /// CSV export, header `t,err_opt,err_fp[,omega_1..omega_N]`.
    pub fn csv(&self) -> String {
        let mut out = String::new();
        out.push_str("t,err_opt,err_fp");
        if let Some(om) = &self.omega {
            for k in 1..=om[0].len() {
                out.push_str(&format!(",omega_{k}"));
            }
        }
        out.push('\n');
        for t in 0..=self.t_end {
            out.push_str(&format!("{t},{},{}", self.err_opt[t], self.err_fp[t]));
            if let Some(om) = &self.omega {
                for v in om[t].iter() {
                    out.push_str(&format!(",{v}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Executes `t_end` steps of ξ^{t+1} = Aξ^t + B(u^t + w^t) and records the
/// error series against both the constrained optimum and the fixed point.
#[allow(clippy::too_many_arguments)]
pub fn run(
    real: &Realization,
    fam: &ObjectiveFamily,
    fp: &FixedPoint,
    omega_opt: &DVector<f64>,
    t_end: usize,
    noise: Option<&NoiseModel>,
    init: &Init,
    record: RecordOpts,
) -> Result<Trajectory> {
    if let Some(nm) = noise {
        if nm.n() != real.n {
            return Err(Error::DimensionMismatch {
                context: "noise covariance vs network",
                expected: real.n,
                got: nm.n(),
            });
        }
    }
    let mut xi = match init {
        Init::Canonical(omega0) => canonical_init(real, fam, omega0)?,
        Init::Explicit(xi0) => {
            if xi0.len() != real.state_dim() {
                return Err(Error::DimensionMismatch {
                    context: "explicit initial state",
                    expected: real.state_dim(),
                    got: xi0.len(),
                });
            }
            let res = invariant_residual(real, fam, std::slice::from_ref(xi0))?;
            if res > 1e-8 * (1.0 + xi0.norm()) {
                return Err(Error::InvalidParam {
                    name: "xi0",
                    reason: format!("violates the algorithm invariant, residual {res:.3e}"),
                });
            }
            xi0.clone()
        }
        Init::AtFixedPoint => fp.xi_star.clone(),
    };

    let mut err_opt = Vec::with_capacity(t_end + 1);
    let mut err_fp = Vec::with_capacity(t_end + 1);
    let mut err_star = Vec::with_capacity(t_end + 1);
    let mut states = record.states.then(|| Vec::with_capacity(t_end + 1));
    let mut omegas = record.omega.then(|| Vec::with_capacity(t_end + 1));

    for t in 0..=t_end {
        let om = real.omega(&xi);
        err_opt.push((&om - omega_opt).norm());
        err_star.push((&om - &fp.omega_star).norm());
        err_fp.push((&xi - &fp.xi_star).norm());
        if let Some(s) = &mut states {
            s.push(xi.clone());
        }
        if let Some(o) = &mut omegas {
            o.push(om);
        }
        if t == t_end {
            break;
        }
        let mut input = fam.gradient(&real.y(&xi))?;
        if let Some(nm) = noise {
            input += nm.draw(t);
        }
        xi = &real.a * xi + &real.b * input;
        let norm = xi.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Divergence { step: t + 1, norm });
        }
    }

    Ok(Trajectory {
        algorithm: real.algorithm,
        mu: real.params.mu,
        sigma: real.sigma,
        seed: noise.map(|nm| nm.seed),
        noisy: noise.is_some(),
        t_end,
        states,
        omega: omegas,
        err_opt,
        err_fp,
        err_star,
    })
}

/// Independent seeded replicas of one noisy run, executed in parallel and
/// returned in replica order (deterministic merge).
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo(
    real: &Realization,
    fam: &ObjectiveFamily,
    fp: &FixedPoint,
    omega_opt: &DVector<f64>,
    t_end: usize,
    noise: &NoiseModel,
    n_runs: usize,
    init: &Init,
) -> Result<Vec<Trajectory>> {
    (0..n_runs)
        .into_par_iter()
        .map(|k| {
            let replica = noise.reseeded(replica_seed(noise.seed, k as u64));
            run(
                real,
                fam,
                fp,
                omega_opt,
                t_end,
                Some(&replica),
                init,
                RecordOpts {
                    states: false,
                    omega: false,
                },
            )
        })
        .collect()
}

/// Least-squares slope of log error_to_fp over the central `window` fraction
/// of a noiseless trajectory, exponentiated to a per-step rate.
pub fn empirical_rate(traj: &Trajectory, window: f64) -> Result<f64> {
    if traj.noisy {
        return Err(Error::NotLinearPhase(
            "rate fits need a noiseless trajectory".into(),
        ));
    }
    if !(window > 0.0 && window <= 1.0) {
        return Err(Error::InvalidParam {
            name: "window",
            reason: format!("must lie in (0, 1], got {window}"),
        });
    }
    let len = traj.err_fp.len();
    if len < 10 {
        return Err(Error::NotLinearPhase(format!(
            "trajectory too short for a rate fit ({len} samples)"
        )));
    }
    let lo = ((len as f64) * (1.0 - window) / 2.0).floor() as usize;
    let hi = len - lo;
    let series = &traj.err_fp[lo..hi];
    if series.iter().any(|&e| e <= RATE_FLOOR) {
        return Err(Error::NotLinearPhase(format!(
            "error reaches the {RATE_FLOOR:.0e} floor inside the fit window"
        )));
    }
    if series[series.len() - 1] >= series[0] {
        return Err(Error::NotLinearPhase(
            "error does not decrease over the fit window".into(),
        ));
    }

    let m = series.len() as f64;
    let logs: Vec<f64> = series.iter().map(|e| e.ln()).collect();
    let t_mean = (m - 1.0) / 2.0;
    let y_mean = logs.iter().sum::<f64>() / m;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (i, y) in logs.iter().enumerate() {
        let dx = i as f64 - t_mean;
        sxx += dx * dx;
        sxy += dx * (y - y_mean);
    }
    let slope = sxy / sxx;
    let rms = (logs
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let fit = y_mean + slope * (i as f64 - t_mean);
            (y - fit) * (y - fit)
        })
        .sum::<f64>()
        / m)
        .sqrt();
    if rms > RATE_FIT_RMS_TOL {
        return Err(Error::NotLinearPhase(format!(
            "log-linear fit residual {rms:.3} exceeds {RATE_FIT_RMS_TOL}"
        )));
    }
    Ok(slope.exp())
}

pub fn empirical_rate_default(traj: &Trajectory) -> Result<f64> {
    empirical_rate(traj, RATE_FIT_WINDOW)
}

/// √(mean over runs and t > burn_in of ‖ω^t − ω*‖²): the empirical
/// counterpart of the certified sensitivity, measured about the fixed point.
pub fn empirical_sensitivity(runs: &[Trajectory], burn_in: usize) -> Result<f64> {
    if runs.len() < 10 {
        return Err(Error::InsufficientSamples(format!(
            "{} runs, need at least 10",
            runs.len()
        )));
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for traj in runs {
        if burn_in >= traj.t_end {
            return Err(Error::InsufficientSamples(format!(
                "burn-in {burn_in} leaves no samples of a {}-step run",
                traj.t_end
            )));
        }
        for t in (burn_in + 1)..=traj.t_end {
            acc += traj.err_star[t] * traj.err_star[t];
            count += 1;
        }
    }
    if count < 1000 {
        return Err(Error::InsufficientSamples(format!(
            "{count} post-burn-in samples, need at least 1000"
        )));
    }
    Ok((acc / count as f64).sqrt())
}

/// Default burn-in: discard the first half (the measure is a steady-state
/// limit).
pub fn default_burn_in(t_end: usize) -> usize {
    t_end / 2
}
