//! End-to-end checks of the `distopt` command surface: exit codes, flag
//! handling, CSV shape, and the scenario loader's failure reporting.

use std::fs;
use std::path::PathBuf;
use std::process::Command;

use proptest::prelude::*;

use distopt_cli::csvio::Table;
use distopt_cli::scenario::Scenario;
use distopt_cli::run;

fn scenario_path(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
        .to_str()
        .unwrap()
        .to_string()
}

fn run_cli(args: &[&str]) -> i32 {
    let mut full = vec!["distopt"];
    full.extend_from_slice(args);
    run(full)
}

#[test]
fn shipped_scenarios_validate() {
    for name in ["paper_sec3a.json", "paper_sec5.json", "gd_scalar.json"] {
        let code = run_cli(&["validate", "--scenario", &scenario_path(name)]);
        assert_eq!(code, 0, "{name} should validate");
    }
}

#[test]
fn identity_gossip_is_rejected_for_lack_of_contraction() {
    let text = r#"{
        "schema_version": 1,
        "subspace": { "consensus": 2 },
        "gossip": { "matrix": [[1.0, 0.0], [0.0, 1.0]] },
        "objectives": { "quadratic": { "slopes": [2.0, 2.0], "offsets": [0.0, 1.0] } },
        "algorithms": ["EXTRA"],
        "params": { "mu": 0.1 }
    }"#;
    let errs = Scenario::from_json(text).unwrap().load().unwrap_err();
    assert!(
        errs.iter().any(|e| e.contains("contraction")),
        "report should cite the missing contraction, got {errs:?}"
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("identity.json");
    fs::write(&path, text).unwrap();
    let code = run_cli(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn svl_without_beta_is_a_missing_param() {
    let text = r#"{
        "schema_version": 1,
        "subspace": { "consensus": 2 },
        "gossip": { "synth": { "sigma": 0.3, "seed": 1 } },
        "objectives": { "quadratic": { "slopes": [2.0, 2.0], "offsets": [0.0, 1.0] } },
        "algorithms": ["SVL"],
        "params": { "mu": 0.1, "svl": { "gamma": 1.0, "delta": 1.0 } }
    }"#;
    let errs = Scenario::from_json(text).unwrap().load().unwrap_err();
    assert!(
        errs.iter().any(|e| e.contains("svl.beta")),
        "got {errs:?}"
    );

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("svl.json");
    fs::write(&path, text).unwrap();
    let code = run_cli(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code, 1);
}

#[test]
fn unparseable_json_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.json");
    fs::write(&path, "{not json").unwrap();
    let code = run_cli(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(code, 2);

    let code = run_cli(&["validate", "--scenario", "/nonexistent/nowhere.json"]);
    assert_eq!(code, 2);
}

#[test]
fn clap_errors_and_help() {
    assert_eq!(run_cli(&["frobnicate"]), 2);
    assert_eq!(run_cli(&["--help"]), 0);
    assert_eq!(run_cli(&["simulate"]), 2, "missing --scenario");
}

#[test]
fn t_flag_yields_exactly_that_many_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&[
        "simulate",
        "--scenario",
        &scenario_path("paper_sec3a.json"),
        "--out",
        &out,
        "--algorithms",
        "DiSPO",
        "--T",
        "10",
        "--seed",
        "1",
    ]);
    assert_eq!(code, 0);
    let csv = fs::read_to_string(dir.path().join("sim_DiSPO_1.csv")).unwrap();
    let table = Table::parse(&csv).unwrap();
    assert_eq!(table.rows.len(), 10);
    assert_eq!(table.header[0], "t");

    let svg = fs::read_to_string(dir.path().join("convergence.svg")).unwrap();
    assert!(svg.starts_with("<svg"));
    assert!(svg.contains("DiSPO"));
}

#[test]
fn algorithm_filter_must_name_scenario_members() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&[
        "simulate",
        "--scenario",
        &scenario_path("gd_scalar.json"),
        "--out",
        &out,
        "--algorithms",
        "EXTRA",
    ]);
    assert_eq!(code, 1, "EXTRA is not part of gd_scalar");

    let code = run_cli(&[
        "simulate",
        "--scenario",
        &scenario_path("gd_scalar.json"),
        "--out",
        &out,
        "--algorithms",
        "NoSuchMethod",
    ]);
    assert_eq!(code, 1);
}

#[test]
fn sweep_needs_a_mu_grid() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&[
        "sweep",
        "--scenario",
        &scenario_path("gd_scalar.json"),
        "--out",
        &out,
    ]);
    assert_eq!(code, 1);
}

#[test]
fn outputs_round_trip_through_the_csv_loader() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap().to_string();
    let code = run_cli(&[
        "simulate",
        "--scenario",
        &scenario_path("gd_scalar.json"),
        "--out",
        &out,
        "--T",
        "40",
        "--seed",
        "3",
    ]);
    assert_eq!(code, 0);
    for name in ["sim_DiSPO_3.csv", "summary.csv"] {
        let text = fs::read_to_string(dir.path().join(name)).unwrap();
        let table = Table::parse(&text).expect(name);
        assert!(!table.rows.is_empty(), "{name} should have data rows");
    }
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let table = Table::parse(&summary).unwrap();
    let gammas = table.numbers("gamma_emp").unwrap();
    assert_eq!(gammas.len(), 1);
}

// The external-backend paths shell out, so drive the real binary with a
// controlled environment.
#[test]
fn external_solver_env_contract() {
    let bin = env!("CARGO_BIN_EXE_distopt");
    let dir = tempfile::tempdir().unwrap();

    let status = Command::new(bin)
        .args([
            "certify",
            "--scenario",
            &scenario_path("gd_scalar.json"),
            "--out",
            dir.path().to_str().unwrap(),
            "--solver",
            "external",
        ])
        .env_remove("DISTOPT_EXTERNAL_SDP")
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2), "missing env var is a config error");

    let status = Command::new(bin)
        .args([
            "certify",
            "--scenario",
            &scenario_path("gd_scalar.json"),
            "--out",
            dir.path().to_str().unwrap(),
            "--solver",
            "external",
        ])
        .env("DISTOPT_EXTERNAL_SDP", "/bin/false")
        .status()
        .unwrap();
    assert_eq!(
        status.code(),
        Some(3),
        "a broken external solver is a numerical failure"
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    // Any numeric table we can emit is parsed back with identical shape and
    // values, including blank cells for missing numbers.
    #[test]
    fn csv_numeric_round_trip(
        rows in prop::collection::vec(
            prop::collection::vec(prop::option::of(-1e12..1e12_f64), 3),
            1..12,
        )
    ) {
        let mut text = String::from("alpha,beta,gamma\n");
        for row in &rows {
            let cells: Vec<String> = row
                .iter()
                .map(|v| v.map(|x| x.to_string()).unwrap_or_default())
                .collect();
            text.push_str(&cells.join(","));
            text.push('\n');
        }
        let table = Table::parse(&text).unwrap();
        prop_assert_eq!(table.rows.len(), rows.len());
        for (j, col) in ["alpha", "beta", "gamma"].iter().enumerate() {
            let nums = table.numbers(col).unwrap();
            for (i, v) in nums.iter().enumerate() {
                match (v, rows[i][j]) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0)),
                    (None, None) => {}
                    other => prop_assert!(false, "mismatch at ({}, {}): {:?}", i, j, other),
                }
            }
        }
    }
}
