use distopt_core::subspace_gossip::{
    consensus_gossip, laplacian_from_edges, projection, spectral_gap, spectral_norm, synth_gossip,
    validate_gossip, validate_gossip_sparse, GossipMatrix, Subspace, GOSSIP_EQ_TOL,
};
use distopt_core::Error;
use nalgebra::{dmatrix, DMatrix};
use proptest::prelude::*;

/// Basis used by the four-agent reference scenario: rows of 𝒰ᵀ are
/// (1,2,3,4) and (1,1,2,2).
fn reference_basis() -> DMatrix<f64> {
    dmatrix![1.0, 1.0; 2.0, 1.0; 3.0, 2.0; 4.0, 2.0]
}

/// Independent projector oracle via the explicit 2×2 Gram inverse:
/// G = [[30, 17], [17, 10]], det G = 11.
fn reference_projection_oracle() -> DMatrix<f64> {
    let u = reference_basis();
    let g_inv = dmatrix![10.0, -17.0; -17.0, 30.0] / 11.0;
    &u * g_inv * u.transpose()
}

#[test]
fn projection_of_identity_basis_is_identity() {
    let p = projection(&DMatrix::identity(4, 4)).unwrap();
    assert!((p - DMatrix::identity(4, 4)).amax() < 1e-12);
}

#[test]
fn projection_of_ones_basis_is_uniform_averaging() {
    let p = projection(&DMatrix::from_element(4, 1, 1.0)).unwrap();
    assert!((p - DMatrix::from_element(4, 4, 0.25)).amax() < 1e-12);
}

#[test]
fn projection_matches_gram_inverse_oracle_on_reference_basis() {
    let u = reference_basis();
    let p = projection(&u).unwrap();
    assert!((&p - reference_projection_oracle()).amax() < 1e-12);
    // Projector fixes the basis and is idempotent.
    assert!((&p * &u - &u).amax() < 1e-10);
    assert!((&p * &p - &p).amax() < 1e-10);
    // Cross-check column by column against least-squares fits.
    for j in 0..4 {
        let col = p.column(j).into_owned();
        let coeffs = u
            .clone()
            .svd(true, true)
            .solve(&DMatrix::identity(4, 4).column(j).into_owned(), 1e-14)
            .unwrap();
        assert!((&u * coeffs - col).amax() < 1e-10);
    }
}

#[test]
fn rank_deficient_basis_is_rejected() {
    let basis = dmatrix![1.0, 2.0; 2.0, 4.0; 3.0, 6.0];
    match projection(&basis) {
        Err(Error::RankDeficient { .. }) => {}
        other => panic!("expected RankDeficient, got {other:?}"),
    }
}

#[test]
fn projection_itself_is_a_valid_gossip_matrix() {
    let sub = Subspace::new(reference_basis()).unwrap();
    let report = validate_gossip(sub.projection(), &sub, GOSSIP_EQ_TOL).unwrap();
    assert!(report.ok, "{report}");
    assert!(report.sigma < 1e-12);
}

#[test]
fn identity_is_not_a_valid_gossip_matrix_on_a_proper_subspace() {
    let sub = Subspace::consensus(4);
    let report = validate_gossip(&DMatrix::identity(4, 4), &sub, GOSSIP_EQ_TOL).unwrap();
    assert!(!report.ok);
    assert!((report.sigma - 1.0).abs() < 1e-12);
}

#[test]
fn path_graph_averaging_matrix_matches_eigenvalue_oracle() {
    // Path on 4 nodes: Laplacian eigenvalues 2 − 2cos(kπ/4), k = 0..3.
    // W = I − 0.3ℒ has eigenvalues 1, 1 − 0.3(2−√2), 0.4, 1 − 0.3(2+√2),
    // so σ = 1 − 0.3(2−√2).
    let lap = laplacian_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
    let w = DMatrix::identity(4, 4) - lap * 0.3;
    let sub = Subspace::consensus(4);
    let report = validate_gossip(&w, &sub, GOSSIP_EQ_TOL).unwrap();
    assert!(report.ok, "{report}");
    let sigma_oracle = 1.0 - 0.3 * (2.0 - 2.0f64.sqrt());
    assert!((report.sigma - sigma_oracle).abs() < 1e-12);

    // Powers contract at exactly σ per step.
    let mut power = w.clone();
    for t in 1..=50 {
        let gap = spectral_norm(&(&power - sub.projection()));
        assert!(
            gap <= sigma_oracle.powi(t) * (1.0 + 1e-8),
            "t = {t}: {gap} vs {}",
            sigma_oracle.powi(t)
        );
        power = &power * &w;
    }
}

#[test]
fn complete_graph_with_critical_step_averages_in_one_shot() {
    let lap = laplacian_from_edges(4, &[(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]);
    let g = consensus_gossip(&lap, 0.25).unwrap();
    assert!((g.matrix() - DMatrix::from_element(4, 4, 0.25)).amax() < 1e-12);
    assert!(g.sigma() < 1e-12);
}

#[test]
fn disconnected_graph_is_rejected() {
    let lap = laplacian_from_edges(4, &[(0, 1), (2, 3)]);
    match consensus_gossip(&lap, 0.3) {
        Err(Error::NotValidGossip(_)) => {}
        other => panic!("expected NotValidGossip, got {other:?}"),
    }
}

#[test]
fn out_of_range_eta_is_rejected() {
    let lap = laplacian_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
    assert!(consensus_gossip(&lap, 0.0).is_err());
    assert!(consensus_gossip(&lap, 1.0).is_err());
}

#[test]
fn synth_gossip_hits_requested_spectral_gaps() {
    let sub = Subspace::new(reference_basis()).unwrap();
    for &sigma in &[0.0, 0.19, 0.5, 0.63, 0.99] {
        let g = synth_gossip(&sub, sigma, 7).unwrap();
        let report = validate_gossip(g.matrix(), &sub, GOSSIP_EQ_TOL).unwrap();
        assert!(report.ok, "sigma {sigma}: {report}");
        assert!(
            (report.sigma - sigma).abs() < 1e-9,
            "sigma {sigma}: got {}",
            report.sigma
        );
    }
}

#[test]
fn synth_gossip_is_deterministic_in_seed() {
    let sub = Subspace::new(reference_basis()).unwrap();
    let a = synth_gossip(&sub, 0.19, 42).unwrap();
    let b = synth_gossip(&sub, 0.19, 42).unwrap();
    assert_eq!(a.matrix(), b.matrix());
    let c = synth_gossip(&sub, 0.19, 43).unwrap();
    assert!((a.matrix() - c.matrix()).amax() > 1e-6);
}

#[test]
fn synth_gossip_with_zero_gap_returns_the_projector() {
    let sub = Subspace::new(reference_basis()).unwrap();
    let g = synth_gossip(&sub, 0.0, 0).unwrap();
    assert!((g.matrix() - sub.projection()).amax() < 1e-12);
}

#[test]
fn spectral_gap_of_projector_is_zero_and_of_identity_is_one() {
    let sub = Subspace::consensus(4);
    assert!(spectral_gap(sub.projection(), &sub).unwrap() < 1e-12);
    assert!((spectral_gap(&DMatrix::identity(4, 4), &sub).unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn dimension_mismatch_is_reported() {
    let sub = Subspace::consensus(4);
    match spectral_gap(&DMatrix::identity(3, 3), &sub) {
        Err(Error::DimensionMismatch { .. }) => {}
        other => panic!("expected DimensionMismatch, got {other:?}"),
    }
}

#[test]
fn sparsity_violations_are_detected() {
    let sub = Subspace::consensus(4);
    let lap = laplacian_from_edges(4, &[(0, 1), (1, 2), (2, 3)]);
    let w = DMatrix::identity(4, 4) - lap * 0.3;
    // W respects the path edges themselves.
    let edges = [(0, 1), (1, 2), (2, 3)];
    let report = validate_gossip_sparse(&w, &sub, GOSSIP_EQ_TOL, Some(&edges)).unwrap();
    assert!(report.ok, "{report}");
    // Dropping one edge from the declared pattern must flag the entry.
    let fewer = [(0, 1), (1, 2)];
    let report = validate_gossip_sparse(&w, &sub, GOSSIP_EQ_TOL, Some(&fewer)).unwrap();
    assert!(!report.ok);
    assert!(report.residual_sparsity.unwrap() > 0.29);
    assert!(GossipMatrix::with_sparsity(w, &sub, GOSSIP_EQ_TOL, Some(&fewer)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn projector_properties_hold_for_random_bases(
        n in 2usize..7,
        q_raw in 1usize..6,
        seed in 0u64..1000,
    ) {
        let q = q_raw.min(n);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        let basis = DMatrix::from_fn(n, q, |_, _| rand::Rng::gen_range(&mut rng, -3.0..3.0));
        let svd = basis.clone().svd(false, false);
        // Skip draws that are numerically near rank deficiency.
        prop_assume!(svd.singular_values.min() > 1e-6 * svd.singular_values.max());
        let p = projection(&basis).unwrap();
        prop_assert!((&p - p.transpose()).amax() < 1e-10);
        prop_assert!((&p * &p - &p).amax() < 1e-9);
        prop_assert!((&p * &basis - &basis).amax() < 1e-8);
    }

    #[test]
    fn synthesized_gossip_powers_contract_geometrically(
        sigma in 0.05f64..0.95,
        seed in 0u64..1000,
    ) {
        let sub = Subspace::new(reference_basis()).unwrap();
        let g = synth_gossip(&sub, sigma, seed).unwrap();
        let mut power = g.matrix().clone();
        for t in 1..=100 {
            // Round-off in the repeated products floors the computable gap
            // near machine precision; only probe while σ^t is above it.
            if sigma.powi(t) < 1e-12 {
                break;
            }
            let gap = spectral_norm(&(&power - sub.projection()));
            prop_assert!(gap <= sigma.powi(t) * (1.0 + 1e-8) + 1e-13);
            power = &power * g.matrix();
        }
    }
}
