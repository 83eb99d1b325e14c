//! Command implementations behind the `distopt` binary.
//!
//! Every command loads and cross-validates the scenario first, then runs,
//! then derives any chart strictly from the CSV files it has already
//! written, so plots can never disagree with the exported numbers.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use distopt_core::algorithms::{build, fixed_point_default, Algorithm};
use distopt_core::analysis::{
    certify_rate, certify_sensitivity, tradeoff_sweep, AnalysisOpts, Certificate, IqcConfig,
};
use distopt_core::objectives::solve_opt_default;
use distopt_core::simulate::{
    default_burn_in, empirical_rate_default, empirical_sensitivity, run, Init, NoiseModel,
    RecordOpts, Trajectory,
};
use distopt_core::Error as CoreError;
use distopt_sdp::Backend;

use crate::csvio::Table;
use crate::scenario::{Loaded, Scenario};
use crate::svg::{line_chart, Series};
use crate::SolverChoice;

pub const EXIT_OK: i32 = 0;
/// Scenario validation failures and certification infeasibility.
pub const EXIT_INVALID: i32 = 1;
/// Unreadable files, JSON parse errors, unwritable outputs.
pub const EXIT_IO: i32 = 2;
/// Numerical breakdown (solver failure, divergence, failed estimates).
pub const EXIT_NUMERIC: i32 = 3;

/// A command failure carrying its process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

pub type CmdResult = Result<(), Failure>;

fn fail(code: i32, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

fn code_for(e: &CoreError) -> i32 {
    match e {
        CoreError::SolverFailure(_)
        | CoreError::NoConvergence { .. }
        | CoreError::Divergence { .. }
        | CoreError::NotLinearPhase(_)
        | CoreError::InsufficientSamples(_) => EXIT_NUMERIC,
        _ => EXIT_INVALID,
    }
}

fn core_fail(context: &str, e: CoreError) -> Failure {
    fail(code_for(&e), format!("{context}: {e}"))
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    Scenario::from_json(&text)
        .map_err(|e| fail(EXIT_IO, format!("cannot parse {}: {e}", path.display())))
}

fn load_scenario(path: &Path) -> Result<Loaded, Failure> {
    read_scenario(path)?.load().map_err(|errs| {
        fail(
            EXIT_INVALID,
            format!("scenario invalid:\n  {}", errs.join("\n  ")),
        )
    })
}

fn backend_for(choice: SolverChoice) -> Result<Backend, Failure> {
    match choice {
        SolverChoice::Internal => Ok(Backend::Internal),
        SolverChoice::External => std::env::var("DISTOPT_EXTERNAL_SDP")
            .map(Backend::External)
            .map_err(|_| {
                fail(
                    EXIT_IO,
                    "--solver external needs DISTOPT_EXTERNAL_SDP to name the solver command",
                )
            }),
    }
}

fn select_algorithms(loaded: &Loaded, filter: Option<&str>) -> Result<Vec<Algorithm>, Failure> {
    let Some(list) = filter else {
        return Ok(loaded.algorithms.clone());
    };
    let mut out = Vec::new();
    for name in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let alg = Algorithm::from_name(name).map_err(|e| fail(EXIT_INVALID, e.to_string()))?;
        if !loaded.algorithms.contains(&alg) {
            return Err(fail(
                EXIT_INVALID,
                format!("algorithm {} is not part of the scenario", alg.name()),
            ));
        }
        if !out.contains(&alg) {
            out.push(alg);
        }
    }
    if out.is_empty() {
        return Err(fail(EXIT_INVALID, "--algorithms selected nothing"));
    }
    Ok(out)
}

fn ensure_out_dir(out: &Path) -> Result<(), Failure> {
    fs::create_dir_all(out)
        .map_err(|e| fail(EXIT_IO, format!("cannot create {}: {e}", out.display())))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Failure> {
    fs::write(path, contents)
        .map_err(|e| fail(EXIT_IO, format!("cannot write {}: {e}", path.display())))
}

fn read_table(path: &Path) -> Result<Table, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| fail(EXIT_IO, format!("cannot read {}: {e}", path.display())))?;
    Table::parse(&text)
        .map_err(|e| fail(EXIT_IO, format!("cannot parse {}: {e}", path.display())))
}

fn sigma_tag(sigma: f64) -> String {
    let s = format!("{sigma:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() {
        "0".into()
    } else {
        s.into()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn cmd_validate(scenario_path: &Path) -> CmdResult {
    let scenario = read_scenario(scenario_path)?;
    match scenario.load() {
        Ok(loaded) => {
            println!("scenario ok: {}", scenario_path.display());
            println!(
                "  {} agents, {} constraint direction(s)",
                loaded.sub.n(),
                loaded.sub.q()
            );
            for g in &loaded.gossips {
                println!("  gossip instance: contraction factor {:.6}", g.sigma());
            }
            println!(
                "  algorithms: {}",
                loaded
                    .algorithms
                    .iter()
                    .map(|a| a.name())
                    .collect::<Vec<_>>()
                    .join(", ")
            );
            println!(
                "  mu = {}, horizon = {}, seeds = {}",
                loaded.params.mu,
                loaded.horizon,
                loaded.seeds.len()
            );
            if let Some(grid) = &loaded.mu_grid {
                println!(
                    "  step-size grid: {} points in [{}, {}]",
                    grid.len(),
                    grid[0],
                    grid[grid.len() - 1]
                );
            }
            Ok(())
        }
        Err(errs) => {
            let mut msg = format!("scenario invalid: {}\n", scenario_path.display());
            for e in &errs {
                msg.push_str(&format!("  {e}\n"));
            }
            msg.pop();
            Err(fail(EXIT_INVALID, msg))
        }
    }
}

struct SummaryRow {
    algorithm: &'static str,
    mu: f64,
    sigma: f64,
    rho_emp: Option<f64>,
    gamma_emp: Option<f64>,
    n_runs: usize,
    status: String,
}

pub struct SimulateArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub seed: Option<u64>,
    pub noiseless: bool,
    pub algorithms: Option<String>,
    pub t: Option<usize>,
}

pub fn cmd_simulate(args: &SimulateArgs) -> CmdResult {
    let loaded = load_scenario(&args.scenario)?;
    let algs = select_algorithms(&loaded, args.algorithms.as_deref())?;
    let horizon = args.t.unwrap_or(loaded.horizon);
    if horizon == 0 {
        return Err(fail(EXIT_INVALID, "--T must be at least 1"));
    }
    // t runs 0..=t_end, so the CSV has exactly `horizon` data rows.
    let t_end = horizon - 1;
    let seeds: Vec<u64> = match args.seed {
        Some(s) => vec![s],
        None => loaded.seeds.clone(),
    };
    let noisy = !args.noiseless && loaded.r.is_some();
    ensure_out_dir(&args.out)?;

    let opt = solve_opt_default(&loaded.fam, &loaded.sub)
        .map_err(|e| core_fail("reference optimum", e))?;
    let gossip = &loaded.gossips[0];
    let init = Init::Canonical(DVector::zeros(loaded.sub.n()));

    let mut rows: Vec<SummaryRow> = Vec::new();
    let mut chart_sources: Vec<(String, PathBuf)> = Vec::new();

    for &alg in &algs {
        let mut row = SummaryRow {
            algorithm: alg.name(),
            mu: loaded.params.mu,
            sigma: gossip.sigma(),
            rho_emp: None,
            gamma_emp: None,
            n_runs: 0,
            status: "ok".into(),
        };
        let real = match build(alg, gossip, &loaded.sub, loaded.params) {
            Ok(r) => r,
            Err(e) => return Err(core_fail(alg.name(), e)),
        };
        let fp = match fixed_point_default(&real, &loaded.fam) {
            Ok(fp) => fp,
            Err(e) => {
                row.status = format!("fixed point failed: {e}");
                rows.push(row);
                continue;
            }
        };

        // Noiseless pass: the rate estimate, and the exported curve when no
        // noise is requested.
        match run(
            &real,
            &loaded.fam,
            &fp,
            &opt.omega_opt,
            t_end,
            None,
            &init,
            RecordOpts::default(),
        ) {
            Ok(traj) => {
                row.rho_emp = empirical_rate_default(&traj).ok();
                if !noisy {
                    let path = args.out.join(format!("sim_{}_noiseless.csv", alg.name()));
                    write_file(&path, &traj.csv())?;
                    chart_sources.push((alg.name().to_string(), path));
                    row.n_runs = 1;
                }
            }
            Err(CoreError::Divergence { step, norm }) => {
                row.status = format!("diverged at step {step} (norm {norm:.3e})");
            }
            Err(e) => return Err(core_fail(alg.name(), e)),
        }

        if noisy && row.status == "ok" {
            let r = loaded.r.as_ref().expect("noisy implies a covariance");
            let mut runs: Vec<Trajectory> = Vec::new();
            for (k, &seed) in seeds.iter().enumerate() {
                let noise = NoiseModel::new(r.clone(), seed)
                    .map_err(|e| core_fail("noise model", e))?;
                match run(
                    &real,
                    &loaded.fam,
                    &fp,
                    &opt.omega_opt,
                    t_end,
                    Some(&noise),
                    &init,
                    RecordOpts::default(),
                ) {
                    Ok(traj) => {
                        let path = args.out.join(format!("sim_{}_{}.csv", alg.name(), seed));
                        write_file(&path, &traj.csv())?;
                        if k == 0 {
                            chart_sources.push((alg.name().to_string(), path));
                        }
                        runs.push(traj);
                    }
                    Err(CoreError::Divergence { step, norm }) => {
                        row.status = format!("diverged at step {step} (norm {norm:.3e})");
                        break;
                    }
                    Err(e) => return Err(core_fail(alg.name(), e)),
                }
            }
            row.n_runs = runs.len();
            if row.status == "ok" && !runs.is_empty() {
                row.gamma_emp = empirical_sensitivity(&runs, default_burn_in(t_end)).ok();
            }
        }
        rows.push(row);
    }

    let mut summary = String::from("algorithm,mu,sigma,rho_emp,gamma_emp,n_runs,status\n");
    for r in &rows {
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.algorithm,
            r.mu,
            r.sigma,
            fmt_opt(r.rho_emp),
            fmt_opt(r.gamma_emp),
            r.n_runs,
            r.status
        ));
    }
    write_file(&args.out.join("summary.csv"), &summary)?;

    // The chart is rebuilt from the CSVs on disk, never from live state.
    let mut series = Vec::new();
    for (name, path) in &chart_sources {
        let table = read_table(path)?;
        let t = table.numbers("t").map_err(|e| fail(EXIT_IO, e))?;
        let err = table.numbers("err_opt").map_err(|e| fail(EXIT_IO, e))?;
        let points = t
            .iter()
            .zip(err.iter())
            .filter_map(|(a, b)| Some(((*a)?, (*b)?)))
            .collect();
        series.push(Series {
            name: name.clone(),
            points,
        });
    }
    let svg = line_chart(
        "Error to the constrained optimum",
        "t",
        "|| omega - omega_opt ||",
        true,
        &series,
    );
    write_file(&args.out.join("convergence.svg"), &svg)?;

    for r in &rows {
        println!(
            "{:<12} rho_emp={} gamma_emp={} runs={} {}",
            r.algorithm,
            fmt_opt(r.rho_emp),
            fmt_opt(r.gamma_emp),
            r.n_runs,
            r.status
        );
    }
    Ok(())
}

pub struct SweepArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub algorithms: Option<String>,
    pub bias: bool,
    pub solver: SolverChoice,
}

pub fn cmd_sweep(args: &SweepArgs) -> CmdResult {
    let loaded = load_scenario(&args.scenario)?;
    let algs = select_algorithms(&loaded, args.algorithms.as_deref())?;
    let grid = loaded
        .mu_grid
        .as_ref()
        .ok_or_else(|| fail(EXIT_INVALID, "scenario has no mu_grid"))?;
    let r = loaded
        .r
        .as_ref()
        .ok_or_else(|| fail(EXIT_INVALID, "scenario has no noise spec (needed for gamma)"))?;
    let opts = AnalysisOpts {
        backend: backend_for(args.solver)?,
        ..AnalysisOpts::default()
    };
    ensure_out_dir(&args.out)?;

    let bias_ref = if args.bias {
        let opt = solve_opt_default(&loaded.fam, &loaded.sub)
            .map_err(|e| core_fail("reference optimum", e))?;
        Some(opt.omega_opt)
    } else {
        None
    };

    let mut csv_paths: Vec<(String, PathBuf)> = Vec::new();
    for gossip in &loaded.gossips {
        for &alg in &algs {
            let sweep = tradeoff_sweep(
                alg,
                gossip,
                &loaded.sub,
                &loaded.params,
                grid,
                &loaded.sector,
                &IqcConfig::default(),
                r,
                bias_ref.as_ref().map(|omega| (&loaded.fam, omega)),
                &opts,
            )
            .map_err(|e| core_fail(&format!("sweep {}", alg.name()), e))?;
            let tag = sigma_tag(gossip.sigma());
            let path = args.out.join(format!("sweep_{}_sigma{}.csv", alg.name(), tag));
            write_file(&path, &sweep.csv())?;
            if let Some(knee) = sweep.knee_mu {
                println!("{} sigma={}: knee at mu={}", alg.name(), tag, knee);
            } else {
                println!("{} sigma={}: no knee on the grid", alg.name(), tag);
            }
            csv_paths.push((format!("{} sigma={}", alg.name(), tag), path));
        }
    }

    // Trade-off chart from the CSVs: certified points only.
    let mut series = Vec::new();
    for (name, path) in &csv_paths {
        let table = read_table(path)?;
        let rho = table.numbers("rho_certified").map_err(|e| fail(EXIT_IO, e))?;
        let gamma = table
            .numbers("gamma_certified")
            .map_err(|e| fail(EXIT_IO, e))?;
        let points = rho
            .iter()
            .zip(gamma.iter())
            .filter_map(|(r, g)| Some(((*r)?, (*g)?)))
            .collect();
        series.push(Series {
            name: name.clone(),
            points,
        });
    }
    let svg = line_chart(
        "Certified sensitivity against certified rate",
        "rho (certified)",
        "gamma (certified)",
        false,
        &series,
    );
    write_file(&args.out.join("tradeoff.svg"), &svg)?;
    Ok(())
}

#[derive(Serialize)]
struct CertJson {
    algorithm: &'static str,
    sigma: f64,
    mu: f64,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rate: Option<CertSide>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sensitivity: Option<CertSide>,
}

#[derive(Serialize)]
struct CertSide {
    bound: f64,
    c: f64,
    margin: f64,
    lambdas: Vec<f64>,
    p: Vec<Vec<f64>>,
    verify_ok: bool,
    max_eig_lmi: f64,
    min_eig_p: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    probes: Option<usize>,
}

fn cert_side(cert: &Certificate, probes: Option<usize>) -> CertSide {
    CertSide {
        bound: cert.bound,
        c: cert.c,
        margin: cert.margin,
        lambdas: cert.lambdas.clone(),
        p: (0..cert.p.nrows())
            .map(|i| cert.p.row(i).iter().copied().collect())
            .collect(),
        verify_ok: cert.verify.ok,
        max_eig_lmi: cert.verify.max_eig_lmi,
        min_eig_p: cert.verify.min_eig_p,
        probes,
    }
}

pub struct CertifyArgs {
    pub scenario: PathBuf,
    pub out: PathBuf,
    pub algorithms: Option<String>,
    pub solver: SolverChoice,
}

pub fn cmd_certify(args: &CertifyArgs) -> CmdResult {
    let loaded = load_scenario(&args.scenario)?;
    let algs = select_algorithms(&loaded, args.algorithms.as_deref())?;
    let r = loaded
        .r
        .as_ref()
        .ok_or_else(|| fail(EXIT_INVALID, "scenario has no noise spec (needed for gamma)"))?;
    let opts = AnalysisOpts {
        backend: backend_for(args.solver)?,
        ..AnalysisOpts::default()
    };
    let cfg = IqcConfig::default();
    ensure_out_dir(&args.out)?;

    let mut entries = Vec::new();
    let mut worst = EXIT_OK;
    for gossip in &loaded.gossips {
        for &alg in &algs {
            let real = build(alg, gossip, &loaded.sub, loaded.params)
                .map_err(|e| core_fail(alg.name(), e))?;
            let mut entry = CertJson {
                algorithm: alg.name(),
                sigma: gossip.sigma(),
                mu: loaded.params.mu,
                status: "certified".into(),
                rate: None,
                sensitivity: None,
            };
            match certify_rate(&real, &loaded.sector, &cfg, &opts) {
                Ok(rc) => entry.rate = Some(cert_side(&rc.certificate, Some(rc.probes))),
                Err(e @ CoreError::InfeasibleAtUpper { .. }) => {
                    entry.status = format!("rate: {e}");
                    worst = worst.max(EXIT_INVALID);
                }
                Err(e) => {
                    entry.status = format!("rate: {e}");
                    worst = worst.max(code_for(&e));
                }
            }
            match certify_sensitivity(&real, &loaded.sector, &cfg, r, &opts) {
                Ok(sc) => entry.sensitivity = Some(cert_side(&sc.certificate, None)),
                Err(e @ CoreError::Infeasible(_)) => {
                    if entry.status == "certified" {
                        entry.status = format!("sensitivity: {e}");
                    }
                    worst = worst.max(EXIT_INVALID);
                }
                Err(e) => {
                    if entry.status == "certified" {
                        entry.status = format!("sensitivity: {e}");
                    }
                    worst = worst.max(code_for(&e));
                }
            }
            println!(
                "{:<12} sigma={} {} rho={} gamma={}",
                entry.algorithm,
                sigma_tag(entry.sigma),
                entry.status,
                fmt_opt(entry.rate.as_ref().map(|c| c.bound)),
                fmt_opt(entry.sensitivity.as_ref().map(|c| c.bound)),
            );
            entries.push(entry);
        }
    }

    let json = serde_json::json!({
        "schema_version": crate::scenario::SCHEMA_VERSION,
        "results": entries,
    });
    let text = serde_json::to_string_pretty(&json)
        .map_err(|e| fail(EXIT_IO, format!("cannot encode certificates: {e}")))?;
    write_file(&args.out.join("certificates.json"), &(text + "\n"))?;

    if worst == EXIT_OK {
        Ok(())
    } else {
        Err(fail(worst, "certification incomplete; see certificates.json"))
    }
}
