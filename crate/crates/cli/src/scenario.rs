//! Scenario files: the single JSON config format binding a subspace, a
//! gossip matrix, an objective family, algorithms, and run settings.
//!
//! Loading is strict (unknown fields rejected) and cross-validates every
//! piece before any run starts, so a scenario that loads cleanly can be
//! handed to any command.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use distopt_core::algorithms::{build, AlgParams, Algorithm};
use distopt_core::objectives::{ObjectiveFamily, SectorBounds};
use distopt_core::subspace_gossip::{synth_gossip, GossipMatrix, Subspace};
use distopt_core::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub subspace: SubspaceSpec,
    pub gossip: GossipSpec,
    pub objectives: ObjectiveSpec,
    /// Optional certification class wider than the concrete family; must
    /// contain the family's own sector bounds.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector: Option<SectorSpec>,
    pub algorithms: AlgorithmsSpec,
    pub params: ParamsSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedsSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu_grid: Option<MuGridSpec>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceSpec {
    /// Row-major N×q basis of the constraint range.
    Basis(Vec<Vec<f64>>),
    /// The all-ones column on N agents.
    Consensus(usize),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(f64),
    Many(Vec<f64>),
}

impl OneOrMany {
    pub fn values(&self) -> Vec<f64> {
        match self {
            OneOrMany::One(v) => vec![*v],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GossipSpec {
    /// Synthesize a valid gossip matrix with the given contraction factor;
    /// several factors produce several instances (one sweep curve each).
    Synth { sigma: OneOrMany, seed: u64 },
    /// Explicit symmetric matrix, validated on load.
    Matrix(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectiveSpec {
    /// Quadratic-plus-cosine family: J_k = a_k(ω−b_k)² − cos(ω).
    QuadCos { a: Vec<f64>, b: Vec<f64> },
    /// Pure quadratics J_k = (c_k/2)(ω−b_k)², so `slopes` are the Hessians.
    Quadratic { slopes: Vec<f64>, offsets: Vec<f64> },
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SectorSpec {
    pub m: Vec<f64>,
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum AlgorithmsSpec {
    /// The literal string "all".
    All(String),
    List(Vec<String>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SvlSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ParamsSpec {
    pub mu: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svl: Option<SvlSpec>,
    /// Global (m, L) used by the methods that need shared constants.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sector_consts: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Isotropic gradient noise with covariance σ_w²·I.
    SigmaW(f64),
    /// Full covariance matrix R.
    R(Vec<Vec<f64>>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum SeedsSpec {
    Range { base: u64, count: u64 },
    List(Vec<u64>),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(untagged)]
pub enum MuGridSpec {
    Log { lo: f64, hi: f64, points: usize },
    Values(Vec<f64>),
}

/// Everything a command needs, constructed and cross-checked.
#[derive(Debug)]
pub struct Loaded {
    pub scenario: Scenario,
    pub sub: Subspace,
    /// One instance per requested contraction factor.
    pub gossips: Vec<GossipMatrix>,
    pub fam: ObjectiveFamily,
    /// Certification class: the override when given, else the family's own.
    pub sector: SectorBounds,
    pub algorithms: Vec<Algorithm>,
    pub params: AlgParams,
    /// Noise covariance for simulation and sensitivity certification.
    pub r: Option<DMatrix<f64>>,
    pub horizon: usize,
    pub seeds: Vec<u64>,
    pub mu_grid: Option<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], what: &str, errs: &mut Vec<String>) -> Option<DMatrix<f64>> {
    if rows.is_empty() || rows[0].is_empty() {
        errs.push(format!("{what}: empty matrix"));
        return None;
    }
    let cols = rows[0].len();
    if rows.iter().any(|r| r.len() != cols) {
        errs.push(format!("{what}: ragged rows"));
        return None;
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    if flat.iter().any(|v| !v.is_finite()) {
        errs.push(format!("{what}: non-finite entry"));
        return None;
    }
    Some(DMatrix::from_row_slice(rows.len(), cols, &flat))
}

fn push_err(errs: &mut Vec<String>, what: &str, e: Error) {
    errs.push(format!("{what}: {e}"));
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    /// Runs every load-time check and either returns the bound scenario or
    /// the full list of failures.
    pub fn load(self) -> Result<Loaded, Vec<String>> {
        let mut errs = Vec::new();
        if self.schema_version != SCHEMA_VERSION {
            errs.push(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            ));
        }

        let sub = match &self.subspace {
            SubspaceSpec::Basis(rows) => matrix_from_rows(rows, "subspace.basis", &mut errs)
                .and_then(|m| match Subspace::new(m) {
                    Ok(s) => Some(s),
                    Err(e) => {
                        push_err(&mut errs, "subspace", e);
                        None
                    }
                }),
            SubspaceSpec::Consensus(n) => {
                if *n == 0 {
                    errs.push("subspace.consensus: need at least one agent".into());
                    None
                } else {
                    Some(Subspace::consensus(*n))
                }
            }
        };

        let fam = match &self.objectives {
            ObjectiveSpec::QuadCos { a, b } => {
                ObjectiveFamily::quad_cos(DVector::from_vec(a.clone()), DVector::from_vec(b.clone()))
            }
            ObjectiveSpec::Quadratic { slopes, offsets } => ObjectiveFamily::quadratic(
                DVector::from_vec(slopes.iter().map(|c| c / 2.0).collect()),
                DVector::from_vec(offsets.clone()),
            ),
        };
        let fam = match fam {
            Ok(f) => Some(f),
            Err(e) => {
                push_err(&mut errs, "objectives", e);
                None
            }
        };

        if let (Some(sub), Some(fam)) = (&sub, &fam) {
            if fam.n_agents() != sub.n() {
                errs.push(format!(
                    "objectives: {} agents but the subspace couples {}",
                    fam.n_agents(),
                    sub.n()
                ));
            }
        }

        let sector = match (&self.sector, &fam) {
            (Some(spec), Some(fam)) => {
                match SectorBounds::new(
                    DVector::from_vec(spec.m.clone()),
                    DVector::from_vec(spec.l.clone()),
                ) {
                    Ok(sec) => {
                        if sec.n_agents() != fam.n_agents() {
                            errs.push(format!(
                                "sector: {} agents, objectives have {}",
                                sec.n_agents(),
                                fam.n_agents()
                            ));
                            None
                        } else {
                            let own = fam.sector();
                            let contains = (0..sec.n_agents()).all(|k| {
                                sec.m_of(k) <= own.m_of(k) + 1e-12
                                    && sec.l_of(k) >= own.l_of(k) - 1e-12
                            });
                            if !contains {
                                errs.push(
                                    "sector: override must contain the objective family's own bounds"
                                        .into(),
                                );
                                None
                            } else {
                                Some(sec)
                            }
                        }
                    }
                    Err(e) => {
                        push_err(&mut errs, "sector", e);
                        None
                    }
                }
            }
            (None, Some(fam)) => Some(fam.sector().clone()),
            _ => None,
        };

        let gossips = match (&self.gossip, &sub) {
            (GossipSpec::Synth { sigma, seed }, Some(sub)) => {
                let mut out = Vec::new();
                let sigmas = sigma.values();
                if sigmas.is_empty() {
                    errs.push("gossip.synth.sigma: empty list".into());
                }
                for s in sigmas {
                    match synth_gossip(sub, s, *seed) {
                        Ok(g) => out.push(g),
                        Err(e) => push_err(&mut errs, "gossip.synth", e),
                    }
                }
                out
            }
            (GossipSpec::Matrix(rows), Some(sub)) => {
                match matrix_from_rows(rows, "gossip.matrix", &mut errs) {
                    Some(m) => match GossipMatrix::new(m, sub, 1e-9) {
                        Ok(g) => vec![g],
                        Err(e) => {
                            push_err(&mut errs, "gossip.matrix", e);
                            Vec::new()
                        }
                    },
                    None => Vec::new(),
                }
            }
            _ => Vec::new(),
        };

        let algorithms: Vec<Algorithm> = match &self.algorithms {
            AlgorithmsSpec::All(word) => {
                if word.eq_ignore_ascii_case("all") {
                    Algorithm::ALL.to_vec()
                } else {
                    match Algorithm::from_name(word) {
                        Ok(a) => vec![a],
                        Err(e) => {
                            push_err(&mut errs, "algorithms", e);
                            Vec::new()
                        }
                    }
                }
            }
            AlgorithmsSpec::List(names) => {
                let mut out = Vec::new();
                for name in names {
                    match Algorithm::from_name(name) {
                        Ok(a) => out.push(a),
                        Err(e) => push_err(&mut errs, "algorithms", e),
                    }
                }
                if names.is_empty() {
                    errs.push("algorithms: empty list".into());
                }
                out
            }
        };

        let mut params = AlgParams::new(self.params.mu);
        if !(self.params.mu > 0.0 && self.params.mu.is_finite()) {
            errs.push(format!("params.mu: must be positive, got {}", self.params.mu));
        }
        if let Some(svl) = &self.params.svl {
            match (svl.beta, svl.gamma, svl.delta) {
                (Some(b), Some(g), Some(d)) => params = params.with_svl(b, g, d),
                (b, g, d) => {
                    for (name, v) in [("svl.beta", b), ("svl.gamma", g), ("svl.delta", d)] {
                        if v.is_none() {
                            push_err(&mut errs, "params", Error::MissingParam(name));
                        }
                    }
                }
            }
        }
        if let Some((m, l)) = self.params.sector_consts {
            if m > 0.0 && l >= m {
                params = params.with_sector_consts(m, l);
            } else {
                errs.push(format!(
                    "params.sector_consts: need 0 < m <= L, got ({m}, {l})"
                ));
            }
        }

        // Per-algorithm construction check against the first gossip
        // instance, so parameter gaps surface at load time.
        if let (Some(sub), Some(first)) = (&sub, gossips.first()) {
            for alg in &algorithms {
                if let Err(e) = build(*alg, first, sub, params) {
                    push_err(&mut errs, alg.name(), e);
                }
            }
        }

        let r = match (&self.noise, &sub) {
            (Some(NoiseSpec::SigmaW(sw)), Some(sub)) => {
                if *sw >= 0.0 && sw.is_finite() {
                    Some(DMatrix::identity(sub.n(), sub.n()) * (sw * sw))
                } else {
                    errs.push(format!("noise.sigma_w: must be finite and >= 0, got {sw}"));
                    None
                }
            }
            (Some(NoiseSpec::R(rows)), Some(sub)) => {
                matrix_from_rows(rows, "noise.r", &mut errs).and_then(|m| {
                    if m.nrows() != sub.n() || m.ncols() != sub.n() {
                        errs.push(format!(
                            "noise.r: {}x{} but the network has {} agents",
                            m.nrows(),
                            m.ncols(),
                            sub.n()
                        ));
                        return None;
                    }
                    if (&m - m.transpose()).amax() > 1e-9 * (1.0 + m.amax()) {
                        errs.push("noise.r: not symmetric".into());
                        return None;
                    }
                    if m.clone().symmetric_eigen().eigenvalues.min() < -1e-9 * (1.0 + m.amax()) {
                        errs.push("noise.r: not positive semidefinite".into());
                        return None;
                    }
                    Some(m)
                })
            }
            _ => None,
        };

        let horizon = self.horizon.unwrap_or(2000);
        if horizon == 0 {
            errs.push("horizon: must be at least 1".into());
        }

        let seeds = match &self.seeds {
            Some(SeedsSpec::Range { base, count }) => {
                if *count == 0 {
                    errs.push("seeds.count: must be at least 1".into());
                }
                (0..*count).map(|k| base.wrapping_add(k)).collect()
            }
            Some(SeedsSpec::List(list)) => {
                if list.is_empty() {
                    errs.push("seeds: empty list".into());
                }
                list.clone()
            }
            None => vec![1],
        };

        let mu_grid = match &self.mu_grid {
            Some(MuGridSpec::Log { lo, hi, points }) => {
                match distopt_core::analysis::log_grid(*lo, *hi, *points) {
                    Ok(g) => Some(g),
                    Err(e) => {
                        push_err(&mut errs, "mu_grid", e);
                        None
                    }
                }
            }
            Some(MuGridSpec::Values(v)) => {
                if v.is_empty() || v.iter().any(|m| !(*m > 0.0 && m.is_finite())) {
                    errs.push("mu_grid: values must be positive and finite".into());
                    None
                } else {
                    let mut g = v.clone();
                    g.sort_by(|a, b| a.partial_cmp(b).unwrap());
                    Some(g)
                }
            }
            None => None,
        };

        if !errs.is_empty() {
            return Err(errs);
        }
        Ok(Loaded {
            scenario: self,
            sub: sub.unwrap(),
            gossips,
            fam: fam.unwrap(),
            sector: sector.unwrap(),
            algorithms,
            params,
            r,
            horizon,
            seeds,
            mu_grid,
        })
    }
}
