use distopt_core::algorithms::{
    build, canonical_init, fixed_point, fixed_point_default, fixed_point_direct,
    invariant_residual,
    noise_preserves_invariant, AlgParams, Algorithm, Realization,
};
use distopt_core::objectives::{solve_opt_default, ObjectiveFamily};
use distopt_core::subspace_gossip::{synth_gossip, GossipMatrix, Subspace, GOSSIP_EQ_TOL};
use distopt_core::Error;
use nalgebra::{dmatrix, dvector, DMatrix, DVector};
use proptest::prelude::*;

fn reference_family() -> ObjectiveFamily {
    ObjectiveFamily::quad_cos(dvector![3.0, 7.0, 2.0, 4.0], dvector![-2.0, -1.0, 5.0, 12.0])
        .unwrap()
}

fn reference_subspace() -> Subspace {
    Subspace::new(dmatrix![1.0, 1.0; 2.0, 1.0; 3.0, 2.0; 4.0, 2.0]).unwrap()
}

/// Parameters that satisfy every algorithm's requirements on the reference
/// scenario (m = 3, L = 15; SVL tuple hand-tuned for stability).
fn reference_params(mu: f64) -> AlgParams {
    AlgParams::new(mu)
        .with_sector_consts(3.0, 15.0)
        .with_svl(0.3, 1.0, 1.0)
}

fn reference_setup(mu: f64) -> (ObjectiveFamily, Subspace, GossipMatrix, AlgParams) {
    let fam = reference_family();
    let sub = reference_subspace();
    let gossip = synth_gossip(&sub, 0.19, 7).unwrap();
    (fam, sub, gossip, reference_params(mu))
}

#[test]
fn dispo_blocks_match_definition() {
    let (_, sub, gossip, params) = reference_setup(0.012);
    let real = build(Algorithm::DiSpo, &gossip, &sub, params).unwrap();
    assert_eq!(real.n_alg, 1);
    assert_eq!(&real.a, gossip.matrix());
    assert!((&real.b + DMatrix::identity(4, 4) * 0.012).amax() < 1e-15);
    assert_eq!(real.c_y, DMatrix::identity(4, 4));
    assert_eq!(real.c_omega, DMatrix::identity(4, 4));
    assert_eq!(real.f_xi.amax(), 0.0);
    assert_eq!(real.f_u.amax(), 0.0);
}

#[test]
fn das_uses_gossip_weighted_gradient_input() {
    let (_, sub, gossip, params) = reference_setup(0.012);
    let real = build(Algorithm::Das, &gossip, &sub, params).unwrap();
    assert!((&real.b + gossip.matrix() * 0.012).amax() < 1e-15);
}

#[test]
fn state_multiplicities_and_shapes_match_the_table() {
    let (_, sub, gossip, params) = reference_setup(0.012);
    let expected: [(Algorithm, usize); 11] = [
        (Algorithm::DiSpo, 1),
        (Algorithm::Das, 1),
        (Algorithm::Extra, 3),
        (Algorithm::Nids, 3),
        (Algorithm::Ed, 2),
        (Algorithm::DiGing, 3),
        (Algorithm::UDig, 2),
        (Algorithm::UExtra, 2),
        (Algorithm::AugDgm, 3),
        (Algorithm::Svl, 2),
        (Algorithm::AccDngdSc, 4),
    ];
    for (alg, n_alg) in expected {
        let real = build(alg, &gossip, &sub, params).unwrap();
        assert_eq!(real.n_alg, n_alg, "{alg}");
        let dim = 4 * n_alg;
        assert_eq!(real.a.shape(), (dim, dim), "{alg}");
        assert_eq!(real.b.shape(), (dim, 4), "{alg}");
        assert_eq!(real.c_y.shape(), (4, dim), "{alg}");
        assert_eq!(real.c_omega.shape(), (4, dim), "{alg}");
        assert_eq!(real.f_xi.shape(), (2, dim), "{alg}");
        assert_eq!(real.f_u.shape(), (2, 4), "{alg}");
        // The iterate selector has unit spectral norm (or zero rows never).
        let c_norm = real.c_omega.clone().svd(false, false).singular_values.max();
        assert!(c_norm <= 1.0 + 1e-12, "{alg}: |C_omega| = {c_norm}");
        // F rows are zero exactly for the two biased algorithms.
        assert_eq!(real.f_xi.amax() > 0.0, alg.has_invariant(), "{alg}");
        assert_eq!(real.f_u.amax(), 0.0, "{alg}");
    }
}

#[test]
fn missing_parameters_are_reported() {
    let (_, sub, gossip, _) = reference_setup(0.012);
    let bare = AlgParams::new(0.012);
    assert!(matches!(
        build(Algorithm::Svl, &gossip, &sub, bare),
        Err(Error::MissingParam(_))
    ));
    assert!(matches!(
        build(Algorithm::UDig, &gossip, &sub, bare),
        Err(Error::MissingParam(_))
    ));
    assert!(matches!(
        build(Algorithm::AccDngdSc, &gossip, &sub, bare),
        Err(Error::MissingParam(_))
    ));
}

#[test]
fn algorithm_names_round_trip() {
    for alg in Algorithm::ALL {
        assert_eq!(Algorithm::from_name(alg.name()).unwrap(), alg);
    }
    assert_eq!(Algorithm::from_name("augdgm").unwrap(), Algorithm::AugDgm);
    assert!(matches!(
        Algorithm::from_name("nope"),
        Err(Error::UnknownAlgorithm(_))
    ));
}

#[test]
fn single_agent_case_degenerates_to_gradient_descent() {
    // With one agent, a full subspace, and 𝒜 = [1], these algorithms all
    // reduce to the centralized gradient descent iteration.
    let sub = Subspace::full(1);
    let gossip = GossipMatrix::new(DMatrix::identity(1, 1), &sub, GOSSIP_EQ_TOL).unwrap();
    let fam = ObjectiveFamily::quadratic(dvector![1.5], dvector![2.0]).unwrap();
    let mu = 0.1;
    let params = AlgParams::new(mu).with_sector_consts(3.0, 3.0);
    for alg in [
        Algorithm::DiSpo,
        Algorithm::Das,
        Algorithm::Extra,
        Algorithm::Nids,
        Algorithm::Ed,
    ] {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let mut xi = canonical_init(&real, &fam, &dvector![1.7]).unwrap();
        let mut w = 1.7f64;
        for t in 0..100 {
            assert!(
                (real.omega(&xi)[0] - w).abs() < 1e-12,
                "{alg} deviates from gradient descent at step {t}"
            );
            xi = real.step(&fam, &xi).unwrap();
            w -= mu * fam.grad_k(0, w);
        }
    }
}

#[test]
fn canonical_init_satisfies_the_invariant_exactly() {
    let (fam, sub, gossip, params) = reference_setup(0.012);
    let omega0 = dvector![0.3, -1.2, 4.0, 2.5];
    for alg in Algorithm::ALL {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let xi0 = canonical_init(&real, &fam, &omega0).unwrap();
        let residual = (&real.f_xi * &xi0).amax();
        assert!(residual < 1e-12, "{alg}: invariant residual {residual:.3e}");
        // Iterate blocks are untouched by the correction.
        assert_eq!(real.omega(&xi0), omega0, "{alg}");
    }
}

#[test]
fn invariant_is_preserved_for_200_noiseless_steps() {
    let (fam, sub, gossip, params) = reference_setup(0.012);
    for alg in Algorithm::ALL.into_iter().filter(|a| a.has_invariant()) {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let mut states = vec![canonical_init(&real, &fam, &DVector::zeros(4)).unwrap()];
        for _ in 0..200 {
            let next = real.step(&fam, states.last().unwrap()).unwrap();
            states.push(next);
        }
        let residual = invariant_residual(&real, &fam, &states).unwrap();
        assert!(residual < 1e-10, "{alg}: max residual {residual:.3e}");
    }
}

#[test]
fn corrupted_initialization_violates_the_invariant() {
    let (fam, sub, gossip, params) = reference_setup(0.012);
    let real = build(Algorithm::DiGing, &gossip, &sub, params).unwrap();
    let mut xi0 = canonical_init(&real, &fam, &DVector::zeros(4)).unwrap();
    // Zero out the tracking block; its seed ∇J(0) is far from zero here.
    xi0.rows_mut(4, 4).fill(0.0);
    let residual = invariant_residual(&real, &fam, &[xi0]).unwrap();
    assert!(residual > 1.0);
}

#[test]
fn invariant_rows_annihilate_the_noise_path() {
    let (_, sub, gossip, params) = reference_setup(0.012);
    for alg in Algorithm::ALL {
        let real = build(alg, &gossip, &sub, params).unwrap();
        assert!(noise_preserves_invariant(&real), "{alg}");
    }
}

#[test]
fn bias_corrected_algorithms_reach_the_constrained_optimum() {
    let (fam, sub, gossip, params) = reference_setup(0.012);
    let opt = solve_opt_default(&fam, &sub).unwrap().omega_opt;
    for alg in Algorithm::ALL.into_iter().filter(|a| a.is_bias_corrected()) {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let fp = fixed_point_default(&real, &fam).unwrap();
        let gap = (&fp.omega_star - &opt).amax();
        assert!(gap < 1e-6, "{alg}: |omega* - omega_opt| = {gap:.3e}");
        assert!(fp.residual < 1e-9, "{alg}: residual {:.3e}", fp.residual);
    }
}

#[test]
fn biased_algorithms_have_step_size_proportional_bias() {
    let fam = reference_family();
    let sub = reference_subspace();
    let gossip = synth_gossip(&sub, 0.19, 7).unwrap();
    let opt = solve_opt_default(&fam, &sub).unwrap().omega_opt;
    for alg in [Algorithm::DiSpo, Algorithm::Das] {
        let bias_at = |mu: f64| {
            let real = build(alg, &gossip, &sub, reference_params(mu)).unwrap();
            let fp = fixed_point_default(&real, &fam).unwrap();
            (&fp.omega_star - &opt).norm()
        };
        let b1 = bias_at(0.006);
        let b2 = bias_at(0.012);
        let b3 = bias_at(0.024);
        assert!(b1 > 0.0, "{alg}: no bias at mu = 0.006");
        // O(μ) law: halving μ halves the bias, within 25%.
        for (lo, hi) in [(b1, b2), (b2, b3)] {
            let ratio = hi / lo;
            assert!(
                (1.5..=2.5).contains(&ratio),
                "{alg}: doubling mu scaled bias by {ratio:.3}"
            );
        }
    }
}

#[test]
fn exact_projection_gossip_recovers_the_centralized_method() {
    let fam = reference_family();
    let sub = reference_subspace();
    // 𝒜 = 𝒫 (zero spectral gap).
    let gossip = synth_gossip(&sub, 0.0, 0).unwrap();
    let mu = 0.012;

    // DAS applies the mixing step to the gradient update as a whole, so with
    // exact projection it IS the centralized projected-gradient iteration and
    // shares its fixed point, the constrained optimum.
    let das = build(Algorithm::Das, &gossip, &sub, AlgParams::new(mu)).unwrap();
    let fp = fixed_point_default(&das, &fam).unwrap();
    let projected = sub.projection()
        * (&fp.omega_star - fam.gradient(&fp.omega_star).unwrap() * mu);
    assert!((projected - &fp.omega_star).amax() < 1e-9);
    let opt = solve_opt_default(&fam, &sub).unwrap().omega_opt;
    assert!((&fp.omega_star - opt).amax() < 1e-9);

    // DiSPO projects only the state, so its stationary point keeps a −μ∇J
    // offset off the subspace while the gradient is orthogonal to it.  The
    // slow contraction (1 − μm) needs a tighter stop than the default to pin
    // the stationarity residual below 1e-9.
    let dispo = build(Algorithm::DiSpo, &gossip, &sub, AlgParams::new(mu)).unwrap();
    let fp = fixed_point(&dispo, &fam, 1e-14, 2_000_000).unwrap();
    let grad = fam.gradient(&fp.omega_star).unwrap();
    assert!((sub.basis().transpose() * &grad).amax() < 1e-9);
    let recomposed = sub.projection() * &fp.omega_star - grad * mu;
    assert!((recomposed - &fp.omega_star).amax() < 1e-9);
}

#[test]
fn interior_optimum_makes_gradients_vanish_at_the_fixed_point() {
    // Consensus target already inside the constraint set: every agent's
    // minimizer coincides, so u* = 0 and all state blocks replicate it.
    let sub = Subspace::consensus(4);
    let gossip = synth_gossip(&sub, 0.3, 3).unwrap();
    let fam = ObjectiveFamily::quadratic(
        dvector![1.0, 2.0, 0.7, 1.1],
        dvector![3.0, 3.0, 3.0, 3.0],
    )
    .unwrap();
    let params = AlgParams::new(0.05)
        .with_sector_consts(1.4, 4.0)
        .with_svl(0.3, 1.0, 1.0);
    for alg in Algorithm::ALL {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let fp = fixed_point_default(&real, &fam).unwrap();
        assert!(fp.u_star.amax() < 1e-9, "{alg}");
        assert!((&fp.omega_star - DVector::from_element(4, 3.0)).amax() < 1e-9, "{alg}");
    }
}

#[test]
fn direct_and_iterative_fixed_points_agree_on_quadratics() {
    let sub = reference_subspace();
    let gossip = synth_gossip(&sub, 0.19, 7).unwrap();
    let fam = ObjectiveFamily::quadratic(
        dvector![3.0, 7.0, 2.0, 4.0],
        dvector![-2.0, -1.0, 5.0, 12.0],
    )
    .unwrap();
    let params = AlgParams::new(0.012)
        .with_sector_consts(4.0, 14.0)
        .with_svl(0.3, 1.0, 1.0);
    for alg in Algorithm::ALL {
        let real = build(alg, &gossip, &sub, params).unwrap();
        let iterated = fixed_point_default(&real, &fam).unwrap();
        let direct = fixed_point_direct(&real, &fam).unwrap();
        let gap = (&iterated.xi_star - &direct.xi_star).amax();
        assert!(gap < 1e-7, "{alg}: direct vs iterated gap {gap:.3e}");
        assert!(direct.residual < 1e-9, "{alg}");
    }
}

fn random_quadratic(seed: u64) -> ObjectiveFamily {
    let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
    let a = DVector::from_fn(4, |_, _| rand::Rng::gen_range(&mut rng, 0.8..4.0));
    let b = DVector::from_fn(4, |_, _| rand::Rng::gen_range(&mut rng, -5.0..5.0));
    ObjectiveFamily::quadratic(a, b).unwrap()
}

fn invariant_scale(real: &Realization, states: &[DVector<f64>]) -> f64 {
    let worst_state = states.iter().map(|x| x.amax()).fold(0.0f64, f64::max);
    real.f_xi.amax().max(1.0) * worst_state.max(1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn invariant_preservation_is_independent_of_gossip_and_objective(
        sigma in 0.05f64..0.9,
        gossip_seed in 0u64..500,
        fam_seed in 0u64..500,
        mu in 0.001f64..0.05,
    ) {
        let sub = reference_subspace();
        let gossip = synth_gossip(&sub, sigma, gossip_seed).unwrap();
        let fam = random_quadratic(fam_seed);
        let params = AlgParams::new(mu)
            .with_sector_consts(fam.sector().m_min(), fam.sector().l_max())
            .with_svl(0.3, 1.0, 1.0);
        for alg in Algorithm::ALL.into_iter().filter(|a| a.has_invariant()) {
            let real = build(alg, &gossip, &sub, params).unwrap();
            let mut states = vec![canonical_init(&real, &fam, &DVector::zeros(4)).unwrap()];
            for _ in 0..50 {
                states.push(real.step(&fam, states.last().unwrap()).unwrap());
            }
            let residual = invariant_residual(&real, &fam, &states).unwrap();
            // Relative tolerance: the trajectory may be divergent for an
            // unstable (μ, σ) draw, which only rescales the round-off.
            prop_assert!(
                residual <= 1e-11 * invariant_scale(&real, &states),
                "{}: residual {residual:.3e}", alg
            );
        }
    }
}
