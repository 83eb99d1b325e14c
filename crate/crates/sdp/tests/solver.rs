use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use distopt_sdp::{max_margin, minimize, LmiBlock, SdpProblem, SolveOpts, SymIndex};

fn scalar_block(constant: f64, terms: &[(usize, f64)]) -> LmiBlock {
    LmiBlock {
        dim: 1,
        constant: DMatrix::from_element(1, 1, constant),
        terms: terms
            .iter()
            .map(|&(j, v)| (j, DMatrix::from_element(1, 1, v)))
            .collect(),
    }
}

#[test]
fn linear_program_in_lmi_clothing() {
    // minimize x subject to x >= 1, written as 1 - x <= 0.
    let prob = SdpProblem {
        n_vars: 1,
        objective: dvector![1.0],
        blocks: vec![scalar_block(1.0, &[(0, -1.0)])],
    };
    let start = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    assert!(start.margin > 0.0);
    let sol = minimize(&prob, &start.x, &SolveOpts::default()).unwrap();
    assert!(sol.converged);
    assert!((sol.objective - 1.0).abs() <= sol.gap + 1e-7, "{}", sol.objective);
    assert!(sol.objective >= 1.0 - 1e-9, "barrier iterates stay feasible");
}

#[test]
fn schur_complement_oracle() {
    // minimize x subject to [[x, 1], [1, x]] >= 0, optimum x* = 1.
    let prob = SdpProblem {
        n_vars: 1,
        objective: dvector![1.0],
        blocks: vec![LmiBlock {
            dim: 2,
            constant: dmatrix![0.0, -1.0; -1.0, 0.0],
            terms: vec![(0, dmatrix![-1.0, 0.0; 0.0, -1.0])],
        }],
    };
    let x0 = dvector![3.0];
    let sol = minimize(&prob, &x0, &SolveOpts::default()).unwrap();
    assert!((sol.objective - 1.0).abs() < 1e-6, "{}", sol.objective);
}

#[test]
fn margin_of_an_interval_is_half_its_width() {
    // x <= 2 and x >= 0; the deepest point of [0, 2] is x = 1 with margin 1.
    let prob = SdpProblem::feasibility(
        1,
        vec![scalar_block(-2.0, &[(0, 1.0)]), scalar_block(0.0, &[(0, -1.0)])],
    );
    let rep = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    assert!(rep.converged);
    assert!((rep.margin - 1.0).abs() < 1e-6, "{}", rep.margin);
    assert!((rep.x[0] - 1.0).abs() < 1e-5, "{}", rep.x[0]);
    assert!(rep.margin_upper_bound >= rep.margin);
    assert!(rep.margin_upper_bound - rep.margin < 1e-7);
}

#[test]
fn contradictory_constraints_yield_a_nonpositive_margin_bound() {
    // x <= 1 and x >= 1 admit no strict interior; the margin optimum is 0.
    let prob = SdpProblem::feasibility(
        1,
        vec![scalar_block(-1.0, &[(0, 1.0)]), scalar_block(1.0, &[(0, -1.0)])],
    );
    let rep = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    assert!(rep.converged);
    assert!(rep.margin <= 0.0);
    assert!(
        rep.margin_upper_bound.abs() < 1e-6,
        "upper bound {} should pin the optimum at zero",
        rep.margin_upper_bound
    );
}

#[test]
fn strictly_infeasible_problems_are_proved_so() {
    // x <= -1 and x >= 1: best margin is -1, and the bound certifies
    // infeasibility by staying clearly negative.
    let prob = SdpProblem::feasibility(
        1,
        vec![scalar_block(1.0, &[(0, 1.0)]), scalar_block(1.0, &[(0, -1.0)])],
    );
    let rep = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    assert!(rep.margin_upper_bound < -0.9, "{}", rep.margin_upper_bound);
}

#[test]
fn early_exit_returns_any_point_past_the_target() {
    let prob = SdpProblem::feasibility(
        1,
        vec![scalar_block(-2.0, &[(0, 1.0)]), scalar_block(0.0, &[(0, -1.0)])],
    );
    let opts = SolveOpts {
        target_margin: Some(0.5),
        ..SolveOpts::default()
    };
    let rep = max_margin(&prob, None, &opts).unwrap();
    assert!(rep.converged);
    assert!(rep.margin >= 0.5);
    assert!(-prob.max_eig(&rep.x) >= 0.5, "reported margin must be real");
}

#[test]
fn scalar_lyapunov_certificate() {
    // For the contraction xi+ = a xi, find p > 0 with a^2 p - rho^2 p <= -m
    // under the normalization p <= 1. Optimal margin: (rho^2 - a^2) (at p = 1)
    // when rho > a, balanced against p >= m; exact optimum solves
    // (rho^2 - a^2) p = m = p is impossible, the cap binds first, so
    // m* = min(1?, ...) -- with p <= 1 and p >= m the analytic optimum is
    // m* = (rho^2 - a^2) / (1 + rho^2 - a^2) if that also keeps p - m <= 1.
    let a: f64 = 0.9;
    let rho: f64 = 0.95;
    let gap = rho * rho - a * a;
    // Blocks: a^2 p - rho^2 p <= 0 (margined), -p <= 0 (margined), p - 1 <= 0.
    // With margin m appended by the solver: a^2 p - rho^2 p + m <= 0 and
    // -p + m <= 0 and p - 1 + m <= 0. Maximizing m: m = min(gap * p, p, 1 - p);
    // best p solves gap * p = 1 - p, giving m* = gap / (1 + gap).
    let prob = SdpProblem::feasibility(
        1,
        vec![
            scalar_block(0.0, &[(0, a * a - rho * rho)]),
            scalar_block(0.0, &[(0, -1.0)]),
            scalar_block(-1.0, &[(0, 1.0)]),
        ],
    );
    let rep = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    let expect = gap / (1.0 + gap);
    assert!((rep.margin - expect).abs() < 1e-6, "{} vs {expect}", rep.margin);

    // Below the contraction rate no certificate exists: margin bound <= 0.
    let rho_bad: f64 = 0.85;
    let prob_bad = SdpProblem::feasibility(
        1,
        vec![
            scalar_block(0.0, &[(0, a * a - rho_bad * rho_bad)]),
            scalar_block(0.0, &[(0, -1.0)]),
            scalar_block(-1.0, &[(0, 1.0)]),
        ],
    );
    let rep_bad = max_margin(&prob_bad, None, &SolveOpts::default()).unwrap();
    assert!(rep_bad.margin_upper_bound < 1e-7, "{}", rep_bad.margin_upper_bound);
}

#[test]
fn matrix_lyapunov_equation_is_recovered() {
    // minimize tr(P) s.t. A' P A - P + I <= 0, P unconstrained in sign
    // (positivity is implied). The optimum is the Lyapunov solution
    // P = sum_k (A')^k A^k, reached as the inequality tightens to equality.
    let a = dmatrix![0.6, 0.3; 0.0, 0.5];
    let sym = SymIndex { d: 2 };
    let mut terms = Vec::new();
    let mut obj = DVector::zeros(sym.len());
    for (k, i, j) in sym.iter() {
        let mut e = DMatrix::zeros(2, 2);
        e[(i, j)] = 1.0;
        e[(j, i)] = 1.0;
        terms.push((k, a.transpose() * &e * &a - &e));
        obj[k] = if i == j { 1.0 } else { 0.0 };
    }
    let prob = SdpProblem {
        n_vars: sym.len(),
        objective: obj,
        blocks: vec![LmiBlock {
            dim: 2,
            constant: DMatrix::identity(2, 2),
            terms,
        }],
    };
    // Exact solution of A' P A - P = -I.
    let mut p_exact = DMatrix::identity(2, 2);
    let mut ak = a.clone();
    for _ in 0..200 {
        p_exact += ak.transpose() * &ak;
        ak = &ak * &a;
    }
    let start = max_margin(&prob, None, &SolveOpts::default()).unwrap();
    assert!(start.margin > 0.0);
    let sol = minimize(&prob, &start.x, &SolveOpts::default()).unwrap();
    let p = sym.unpack(&sol.x, 0);
    assert!((sol.objective - p_exact.trace()).abs() < 1e-5);
    assert!((&p - &p_exact).norm() < 1e-4, "{p} vs {p_exact}");
}

#[test]
fn random_interiors_are_found_again() {
    // Build problems that are strictly feasible at a known random point and
    // check the solver lands at least as deep as constructed.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let n = rng.gen_range(1..4usize);
        let dim = rng.gen_range(1..4usize);
        let x_star = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let mut blocks = Vec::new();
        for _ in 0..2 {
            let terms: Vec<(usize, DMatrix<f64>)> = (0..n)
                .map(|j| {
                    let raw = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
                    (j, (&raw + raw.transpose()) * 0.5)
                })
                .collect();
            let mut at_star = DMatrix::zeros(dim, dim);
            for (j, t) in &terms {
                at_star += t * x_star[*j];
            }
            // constant = -(at_star) - I so that F(x_star) = -I exactly.
            blocks.push(LmiBlock {
                dim,
                constant: -at_star - DMatrix::identity(dim, dim),
                terms,
            });
        }
        let prob = SdpProblem::feasibility(n, blocks);
        let rep = max_margin(&prob, None, &SolveOpts::default()).unwrap();
        assert!(
            rep.margin >= 1.0 - 1e-6,
            "constructed margin 1 at x*, found {}",
            rep.margin
        );
        assert!(-prob.max_eig(&rep.x) >= 1.0 - 1e-6);
    }
}

#[test]
fn minimize_rejects_points_on_the_wrong_side() {
    let prob = SdpProblem {
        n_vars: 1,
        objective: dvector![1.0],
        blocks: vec![scalar_block(1.0, &[(0, -1.0)])],
    };
    let err = minimize(&prob, &dvector![0.0], &SolveOpts::default());
    assert!(matches!(
        err,
        Err(distopt_sdp::SdpError::NotStrictlyFeasible(_))
    ));
}

#[test]
fn malformed_problems_are_rejected() {
    let empty = SdpProblem::feasibility(1, vec![]);
    assert!(matches!(
        max_margin(&empty, None, &SolveOpts::default()),
        Err(distopt_sdp::SdpError::BadProblem(_))
    ));

    let out_of_range = SdpProblem::feasibility(1, vec![scalar_block(0.0, &[(3, 1.0)])]);
    assert!(matches!(
        max_margin(&out_of_range, None, &SolveOpts::default()),
        Err(distopt_sdp::SdpError::BadProblem(_))
    ));
}

#[test]
fn external_backend_round_trip_and_failures() {
    use distopt_sdp::{max_margin_via, Backend};
    use std::io::Write;
    use std::os::unix::fs::PermissionsExt;

    let prob = SdpProblem::feasibility(
        1,
        vec![scalar_block(-2.0, &[(0, 1.0)]), scalar_block(0.0, &[(0, -1.0)])],
    );
    let opts = SolveOpts::default();

    let missing = Backend::External("/nonexistent/solver".into());
    assert!(max_margin_via(&prob, None, &opts, &missing).is_err());

    let dir = std::env::temp_dir().join(format!("sdp-ext-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let write_script = |name: &str, body: &str| {
        let path = dir.join(name);
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "#!/bin/sh\ncat > /dev/null\n{body}").unwrap();
        std::fs::set_permissions(&path, std::fs::Permissions::from_mode(0o755)).unwrap();
        path
    };

    // A well-behaved stub: claims x = 1 (the true deepest point) plus a
    // margin guess that must be ignored in favor of recomputation.
    let good = write_script("good.sh", r#"echo '{"status":"optimal","x":[1.0,7.0]}'"#);
    let rep = max_margin_via(&prob, None, &opts, &Backend::External(good.display().to_string()))
        .unwrap();
    assert!((rep.x[0] - 1.0).abs() < 1e-12);
    assert!((rep.margin - 1.0).abs() < 1e-12, "recomputed, not trusted");
    assert_eq!(rep.margin_upper_bound, f64::INFINITY);

    let short = write_script("short.sh", r#"echo '{"status":"optimal","x":[1.0]}'"#);
    assert!(
        max_margin_via(&prob, None, &opts, &Backend::External(short.display().to_string()))
            .is_err()
    );

    let garbled = write_script("garbled.sh", "echo not-json");
    assert!(
        max_margin_via(&prob, None, &opts, &Backend::External(garbled.display().to_string()))
            .is_err()
    );

    let infeas = write_script("infeas.sh", r#"echo '{"status":"infeasible"}'"#);
    assert!(
        max_margin_via(&prob, None, &opts, &Backend::External(infeas.display().to_string()))
            .is_err()
    );

    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn sym_index_round_trip() {
    let sym = SymIndex { d: 4 };
    assert_eq!(sym.len(), 10);
    let mut seen = vec![false; sym.len()];
    for (k, i, j) in sym.iter() {
        assert_eq!(k, sym.idx(i, j));
        assert!(!seen[k]);
        seen[k] = true;
    }
    assert!(seen.iter().all(|&s| s));

    let x = DVector::from_iterator(10, (0..10).map(|v| v as f64));
    let p = sym.unpack(&x, 0);
    assert_eq!(p[(0, 3)], 3.0);
    assert_eq!(p[(3, 0)], 3.0);
    assert_eq!(p[(2, 2)], 7.0);
    assert_eq!(p, p.transpose());
}
