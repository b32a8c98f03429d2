use perpetua::classify::{
    augmented_sign_chain, embedded_trichotomy, hat_tau_periodicity, j_function, j_moment_test, mrw_trichotomy,
    mrw_trichotomy_mc, null_homology, EmbeddedTag, HomologyFailure, MomentTarget, MrwTag, Periodicity,
};
use perpetua::examples::{flower, grincevicius4};
use perpetua::oracle::{enumerate_backward, enumerate_forward, OracleConfig};
use perpetua::simulate::{
    divergence_diagnostic, perpetuity_samples, run_backward, run_forward, sample_excursions, trajectory, FiniteSampler,
    PetalWeights, SimError, Start, DEFAULT_STEP_CAP,
};
use perpetua::{DiscreteLaw, EdgeLaw, Model};

fn two_state_two_atoms() -> Model {
    let law = |a1: f64, b1: f64, a2: f64, b2: f64| EdgeLaw {
        atoms: vec![
            perpetua::EdgeAtom { w: 0.5, a: a1, b: b1 },
            perpetua::EdgeAtom { w: 0.5, a: a2, b: b2 },
        ],
    };
    Model::from_edges(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        vec![
            ((0, 0), law(0.5, 1.0, -0.3, 0.2)),
            ((0, 1), law(1.2, -1.0, 0.1, 0.7)),
            ((1, 0), law(-0.8, 0.4, 0.6, 1.5)),
            ((1, 1), law(0.9, 0.0, -1.1, -0.6)),
        ],
    )
    .unwrap()
}

fn cycle3(h: [f64; 3]) -> Model {
    let p = vec![vec![0.5, 0.5, 0.0], vec![0.0, 0.5, 0.5], vec![0.5, 0.0, 0.5]];
    let e = |i: usize, j: usize| ((i, j), EdgeLaw::point(h[j] / h[i], 1.0));
    Model::from_edges(p, vec![e(0, 0), e(0, 1), e(1, 1), e(1, 2), e(2, 2), e(2, 0)]).unwrap()
}

#[test]
fn deterministic_backward_run_is_exact() {
    let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
    let s = run_backward(&FiniteSampler::new(&m), Start::State(0), 30, &[DiscreteLaw::point(0.0)], 1000, 0);
    assert!(s.values.iter().all(|&v| v == 2.0 - 2f64.powi(-29)));
    let f = run_forward(&FiniteSampler::new(&m), Start::State(0), 30, &[DiscreteLaw::point(0.0)], 1000, 0);
    assert!(f.values.iter().all(|&v| v == 2.0 - 2f64.powi(-29)));
}

#[test]
fn example_backward_concentrates_at_zero() {
    let m = grincevicius4(0.5);
    let z0 = DiscreteLaw::point(0.0);
    let s = run_backward(&FiniteSampler::new(&m), Start::State(0), 100, &[z0.clone()], 200_000, 3);
    // Exact tail P(|Ψ| > 0.01) at n = 100 is about 1.2e-8.
    assert_eq!(s.fraction(|v| v.abs() > 0.01), 0.0);
    let cfg = OracleConfig { horizon: 100, ..OracleConfig::default() };
    let exact = enumerate_backward(&m, 0, 100, &z0, &cfg).unwrap();
    assert!(s.law().ks_distance(&exact, 1e-12) < 0.01);
}

#[test]
fn runs_match_enumeration_on_a_two_state_model() {
    let m = two_state_two_atoms();
    let z0 = [DiscreteLaw::point(0.0)];
    let cfg = OracleConfig::default();
    let exact_b = enumerate_backward(&m, 0, 3, &z0[0], &cfg).unwrap();
    let exact_f = enumerate_forward(&m, 0, 3, &z0[0], &cfg).unwrap();
    assert!(exact_b.len() <= 64);
    let gen = FiniteSampler::new(&m);
    let b = run_backward(&gen, Start::State(0), 3, &z0, 1_000_000, 11);
    let f = run_forward(&gen, Start::State(0), 3, &z0, 1_000_000, 12);
    assert!(b.law().ks_distance(&exact_b, 1e-9) <= 0.01);
    assert!(f.law().ks_distance(&exact_f, 1e-9) <= 0.01);
}

#[test]
fn runs_are_reproducible_across_thread_counts() {
    let m = two_state_two_atoms();
    let gen = FiniteSampler::new(&m);
    let z0 = [DiscreteLaw::point(1.0)];
    let a = run_backward(&gen, Start::Law(m.pi()), 12, &z0, 5000, 42);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let b = pool.install(|| run_backward(&gen, Start::Law(m.pi()), 12, &z0, 5000, 42));
    assert_eq!(a, b);
}

#[test]
fn trajectory_telescopes() {
    let m = two_state_two_atoms();
    let t = trajectory(&FiniteSampler::new(&m), 0, 50, 0.0, 9, 3);
    let mut prev_back = 0.0;
    let mut prev_pi = 1.0;
    for r in &t.records {
        let inc = r.z_backward - prev_back;
        assert!((inc - prev_pi * r.b).abs() <= 1e-9 * (1.0 + inc.abs()));
        assert!((r.pi_n - prev_pi * r.a).abs() <= 1e-12 * r.pi_n.abs().max(1e-300));
        assert!((r.s_n + r.pi_n.abs().ln()).abs() < 1e-9);
        prev_back = r.z_backward;
        prev_pi = r.pi_n;
    }
}

#[test]
fn single_state_excursions_have_unit_length() {
    let m = Model::single_state(&[(0.5, 2.0, 1.0), (0.5, 0.25, 1.0)]).unwrap();
    let b = sample_excursions(&FiniteSampler::new(&m), 0, 1000, 0, DEFAULT_STEP_CAP).unwrap();
    assert!(b.samples.iter().all(|x| x.tau == 1));
    assert!(b.samples.iter().all(|x| (x.a_i.abs() - (-x.s_tau).exp()).abs() < 1e-9));
}

#[test]
fn flower_petal_excursions_halve_the_product() {
    let f = flower(PetalWeights::Geometric { ratio: 0.5 });
    let b = sample_excursions(&f, 0, 20_000, 5, DEFAULT_STEP_CAP).unwrap();
    for x in &b.samples {
        match x.tau {
            1 => assert!(x.product.is_exact_pow2(0)),
            2 => assert!(x.product.is_exact_pow2(-1)),
            t => panic!("flower excursion of length {t}"),
        }
    }
}

#[test]
fn example_excursions_have_zero_intercept() {
    let m = grincevicius4(0.5);
    let b = sample_excursions(&FiniteSampler::new(&m), 0, 100_000, 1, DEFAULT_STEP_CAP).unwrap();
    let short = b.samples.iter().filter(|x| x.tau == 2).count() as f64 / 100_000.0;
    assert!((short - 0.5).abs() < 0.01);
    assert!(b.samples.iter().all(|x| x.tau == 2 || x.tau == 3));
    assert!(b.samples.iter().all(|x| x.b_i.abs() < 1e-12));
}

#[test]
fn excursion_timeout_is_reported() {
    let f = flower(PetalWeights::List { weights: vec![1.0] });
    let m = Model::from_edges(
        vec![vec![0.999, 0.001], vec![1.0, 0.0]],
        vec![((0, 0), EdgeLaw::point(1.0, 1.0)), ((0, 1), EdgeLaw::point(1.0, 1.0)), ((1, 0), EdgeLaw::point(1.0, 1.0))],
    )
    .unwrap();
    let err = sample_excursions(&FiniteSampler::new(&m), 1, 100, 0, 3).unwrap_err();
    assert!(matches!(err, SimError::ExcursionTimeout { cap: 3, .. }));
    assert!(sample_excursions(&f, 0, 10, 0, 10_000).is_ok());
}

#[test]
fn perpetuity_samples_of_half_contraction() {
    let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
    let s = perpetuity_samples(&m, Start::State(0), 100, 60, 0).unwrap();
    assert!(s.values.iter().all(|v| (v - 2.0).abs() <= 2f64.powi(-59)));
}

#[test]
fn perpetuity_mean_of_two_rates() {
    let m = Model::single_state(&[(0.5, 0.5, 1.0), (0.5, 0.25, 1.0)]).unwrap();
    let s = perpetuity_samples(&m, Start::State(0), 200_000, 60, 7).unwrap();
    let n = s.values.len() as f64;
    let mean = s.values.iter().sum::<f64>() / n;
    let var = s.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // E Z = E B / (1 - E A) for independent iid coefficients.
    let exact: f64 = 1.0 / (1.0 - (0.5 * 0.5 + 0.5 * 0.25));
    assert!((exact - 1.6).abs() < 1e-15);
    assert!((mean - exact).abs() <= 3.0 * (var / n).sqrt());
}

#[test]
fn perpetuity_refuses_non_contracting_models() {
    let m = Model::single_state(&[(1.0, 2.0, -1.0)]).unwrap();
    assert!(matches!(perpetuity_samples(&m, Start::State(0), 10, 10, 0), Err(SimError::NotConvergentRegime(_))));
}

#[test]
fn divergence_diagnostic_behaviour() {
    let rw = Model::single_state(&[(0.5, 2.0, 1.0), (0.5, 0.5, 1.0)]).unwrap();
    let r = divergence_diagnostic(&rw, &[10, 100, 1000], 1.0, 20_000, 0).unwrap();
    assert!(r.strictly_decreasing);
    // Independent CLT estimate: P(|S_n| ≤ 1) ≈ P(|N| ≤ 1 / (√n log 2)).
    let p1000 = r.checkpoints[2].1;
    assert!(p1000 < 0.1, "{p1000}");
    let null = Model::single_state(&[(1.0, -1.0, 1.0)]).unwrap();
    assert!(matches!(divergence_diagnostic(&null, &[10], 1.0, 10, 0), Err(SimError::Precondition(_))));
    let drift = Model::single_state(&[(1.0, 2.0, 1.0)]).unwrap();
    let d = divergence_diagnostic(&drift, &[1, 2, 3], 1.0, 100, 0).unwrap();
    assert_eq!(d.checkpoints, vec![(1, 1.0), (2, 0.0), (3, 0.0)]);
}

#[test]
fn null_homology_round_trip() {
    let h = [1.0, 2.0, 3.0];
    let m = cycle3(h);
    let w = null_homology(&m);
    let w = w.witness().expect("null-homologous");
    // a_ij = h_j / h_i means -log|a| = g(j) - g(i) with g = -log h + const.
    for i in 0..3 {
        assert!((w.g[i] - (-(h[i] / h[0]).ln())).abs() < 1e-12);
    }
}

#[test]
fn null_homology_failures() {
    let rw = Model::single_state(&[(0.5, 2.0, 1.0), (0.5, 0.5, 1.0)]).unwrap();
    assert!(matches!(
        null_homology(&rw),
        perpetua::classify::Homology::NotNullHomologous(HomologyFailure::EdgeNotPointMass { .. })
    ));
    match null_homology(&grincevicius4(0.5)) {
        perpetua::classify::Homology::NotNullHomologous(HomologyFailure::Cycle { abs_product, .. }) => {
            assert!((abs_product - 0.5).abs() < 1e-12 || (abs_product - 2.0).abs() < 1e-12);
        }
        other => panic!("{other:?}"),
    }
}

#[test]
fn trichotomy_tags() {
    let tag = |atoms: &[(f64, f64, f64)]| embedded_trichotomy(&Model::single_state(atoms).unwrap()).tag;
    assert_eq!(tag(&[(1.0, 0.5, 1.0)]), EmbeddedTag::T1p);
    assert_eq!(tag(&[(1.0, -1.0, 1.0)]), EmbeddedTag::T2p);
    assert_eq!(tag(&[(1.0, 2.0, 1.0)]), EmbeddedTag::T3p);
    assert_eq!(tag(&[(0.5, 2.0, 1.0), (0.5, 0.5, 1.0)]), EmbeddedTag::T3p);
    let g = embedded_trichotomy(&grincevicius4(0.5));
    assert_eq!(g.tag, EmbeddedTag::T1p);
    assert!((g.mean_log_abs_a - 0.2 * 0.5f64.ln()).abs() < 1e-12);
    assert_eq!(mrw_trichotomy(&Model::single_state(&[(1.0, 2.0, 1.0)]).unwrap()).tag, MrwTag::T3);
    assert_eq!(mrw_trichotomy(&cycle3([1.0, 2.0, 3.0])).tag, MrwTag::T2);
}

#[test]
fn flower_full_walk_separates_from_embedded_walk() {
    let f = flower(PetalWeights::Geometric { ratio: 0.5 });
    let r = mrw_trichotomy_mc(&f, 0, 1_000_000, 0, 6.0 * 10f64.ln()).unwrap();
    assert_eq!(r.embedded_tag, EmbeddedTag::T1p);
    assert_eq!(r.mrw_tag, MrwTag::T3);
}

#[test]
fn j_function_values() {
    let half = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
    let j = j_function(&half, 0, 5).unwrap();
    assert_eq!(j.eval(0.0), 1.0);
    assert!((j.eval(1.0) - 1.0 / 2f64.ln()).abs() < 1e-12);
    let expanding = Model::single_state(&[(1.0, 2.0, 1.0)]).unwrap();
    let j = j_function(&expanding, 0, 5).unwrap();
    assert_eq!(j.eval(3.5), 3.5);
    let r = j_moment_test(&half, 0, MomentTarget::B, 5).unwrap();
    assert_eq!(r.verdict, "finite (structural)");
}

#[test]
fn periodicity_of_unit_returns() {
    let per = |atoms: &[(f64, f64, f64)]| hat_tau_periodicity(&Model::single_state(atoms).unwrap(), 0).unwrap().periodicity;
    assert_eq!(per(&[(1.0, -1.0, 1.0)]), Periodicity::TwoPeriodic);
    assert_eq!(per(&[(0.5, -1.0, 1.0), (0.5, 1.0, 0.0)]), Periodicity::Aperiodic);
    assert_eq!(per(&[(1.0, 1.0, 0.0)]), Periodicity::Aperiodic);
    assert!(hat_tau_periodicity(&Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap(), 0).is_err());
}

#[test]
fn sign_chains() {
    let equi = Model::single_state(&[(0.5, -1.0, 2.0), (0.5, 1.0, 0.0)]).unwrap();
    let c = augmented_sign_chain(&equi, 0).unwrap();
    assert_eq!(c.period, 1);
    assert!((c.stationary_mass(0, 1) - 0.5).abs() < 1e-12 && (c.stationary_mass(0, -1) - 0.5).abs() < 1e-12);
    let flip = Model::single_state(&[(1.0, -1.0, 6.0)]).unwrap();
    let c = augmented_sign_chain(&flip, 0).unwrap();
    assert_eq!(c.period, 2);
    assert_eq!(c.cyclic_classes, vec![vec![(0, 1)], vec![(0, -1)]]);
    // Signs σ = (1, -1, 1) with a_ij = σ_i σ_j h_j / h_i.
    let sigma = [1.0, -1.0, 1.0];
    let h = [1.0, 2.0, 4.0];
    let p = vec![vec![0.2, 0.5, 0.3], vec![0.4, 0.2, 0.4], vec![0.3, 0.3, 0.4]];
    let edges = (0..3)
        .flat_map(|i| (0..3).map(move |j| ((i, j), EdgeLaw::point(sigma[i] * sigma[j] * h[j] / h[i], 1.0))))
        .collect();
    let m = Model::from_edges(p, edges).unwrap();
    let c = augmented_sign_chain(&m, 1).unwrap();
    for j in 0..3 {
        let delta = if sigma[j] / sigma[1] > 0.0 { 1 } else { -1 };
        assert!((c.stationary_mass(j, delta) - m.pi()[j]).abs() < 1e-12);
        assert_eq!(c.stationary_mass(j, -delta), 0.0);
    }
}
