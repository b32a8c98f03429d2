use perpetua::examples::grincevicius4;
use perpetua::model::{ModelError, StateRef, EdgeSpec, ModelSpec};
use perpetua::oracle::{enumerate_backward, enumerate_forward, excursion_law, paths, OracleConfig};
use perpetua::{DiscreteLaw, EdgeAtom, EdgeLaw, Model};

fn flower3() -> Model {
    let p = vec![vec![0.5, 0.25, 0.25], vec![1.0, 0.0, 0.0], vec![1.0, 0.0, 0.0]];
    let e = |i, j| ((i, j), EdgeLaw::point(0.5, 1.0));
    Model::from_edges(p, vec![e(0, 0), e(0, 1), e(0, 2), e(1, 0), e(2, 0)]).unwrap()
}

/// πP = π by repeated multiplication, independent of the direct solve.
fn power_iteration(p: &[Vec<f64>]) -> Vec<f64> {
    let n = p.len();
    let mut v = vec![1.0 / n as f64; n];
    for _ in 0..20_000 {
        let next: Vec<f64> = (0..n).map(|j| (0..n).map(|i| v[i] * p[i][j]).sum()).collect();
        v = next;
    }
    v
}

fn assert_close(x: &[f64], y: &[f64], tol: f64) {
    assert_eq!(x.len(), y.len());
    for (a, b) in x.iter().zip(y) {
        assert!((a - b).abs() <= tol, "{x:?} vs {y:?}");
    }
}

#[test]
fn single_state_model_is_valid() {
    let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
    assert_eq!(m.pi(), &[1.0]);
}

#[test]
fn two_cycle_is_rejected_as_periodic() {
    let p = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    let err = Model::from_edges(p, vec![((0, 1), EdgeLaw::point(1.0, 1.0)), ((1, 0), EdgeLaw::point(1.0, 1.0))]).unwrap_err();
    assert_eq!(err.0, vec![ModelError::NotAperiodic(2)]);
}

#[test]
fn spec_validation_reports_all_violations() {
    let spec = ModelSpec {
        states: vec!["x".into(), "y".into()],
        transition: vec![vec![0.5, 0.6], vec![0.5, 0.5]],
        edges: vec![EdgeSpec {
            from: StateRef::Label("x".into()),
            to: StateRef::Index(0),
            atoms: vec![EdgeAtom { w: 0.7, a: 1.0, b: 0.0 }],
        }],
        initial_law: None,
    };
    let errs = spec.validate().unwrap_err().0;
    assert!(errs.iter().any(|e| matches!(e, ModelError::RowSumError { .. })));
    assert!(errs.iter().any(|e| matches!(e, ModelError::BadWeights { .. })));
    assert!(errs.iter().any(|e| matches!(e, ModelError::MissingEdgeLaw { .. })));
}

#[test]
fn example_model_is_valid_and_satisfies_standing_assumption() {
    let m = grincevicius4(0.5);
    assert!(m.standing_assumption().holds());
}

#[test]
fn stationary_laws() {
    let sym = Model::from_edges(
        vec![vec![0.5, 0.5], vec![0.5, 0.5]],
        (0..2).flat_map(|i| (0..2).map(move |j| ((i, j), EdgeLaw::point(0.5, 1.0)))).collect(),
    )
    .unwrap();
    assert_close(sym.pi(), &[0.5, 0.5], 1e-15);
    let f = flower3();
    assert_close(f.pi(), &power_iteration(f.transition()), 1e-12);
    assert_close(f.pi(), &[2.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0], 1e-12);
    let g = grincevicius4(0.5);
    assert_close(g.pi(), &power_iteration(g.transition()), 1e-12);
    assert_close(g.pi(), &[0.4, 0.2, 0.2, 0.2], 1e-12);
}

#[test]
fn dual_transitions() {
    let f = flower3();
    let d = f.dual();
    assert!((d.p(0, 1) - 0.25).abs() < 1e-12);
    // The flower chain is reversible, so its dual has the same transitions.
    for i in 0..3 {
        assert_close(&d.transition()[i], &f.transition()[i], 1e-12);
    }
    let one = Model::single_state(&[(0.5, 2.0, 1.0), (0.5, 0.3, -1.0)]).unwrap();
    assert_eq!(one.dual(), one);
    let g = grincevicius4(0.5);
    assert_close(g.dual().pi(), g.pi(), 1e-12);
    assert!(g.dual().to_spec().validate().is_ok());
    let dd = g.dual().dual();
    for i in 0..4 {
        assert_close(&dd.transition()[i], &g.transition()[i], 1e-12);
    }
}

#[test]
fn standing_assumption_flags() {
    let zero_a = Model::single_state(&[(0.1, 0.0, 1.0), (0.9, 0.5, 1.0)]).unwrap();
    let r = zero_a.standing_assumption();
    assert!(!r.a_never_zero);
    assert!((r.prob_a_zero - 0.1).abs() < 1e-15);
    let zero_b = Model::single_state(&[(0.5, 2.0, 0.0), (0.5, 0.5, 0.0)]).unwrap();
    assert!(!zero_b.standing_assumption().b_not_identically_zero);
}

#[test]
fn geometric_partial_sum() {
    let m = Model::single_state(&[(1.0, 0.5, 1.0)]).unwrap();
    let law = enumerate_backward(&m, 0, 3, &DiscreteLaw::point(0.0), &OracleConfig::default()).unwrap();
    assert_eq!(law.as_point(), Some(1.75));
}

#[test]
fn example_excursion_intercepts_vanish() {
    let m = grincevicius4(0.5);
    let ex = excursion_law(&m, 0, 3, &OracleConfig::default()).unwrap();
    assert_eq!(ex.tail_mass, 0.0);
    assert_eq!(ex.atoms.len(), 2);
    let short = ex.atoms.iter().find(|x| x.tau == 2).unwrap();
    let long = ex.atoms.iter().find(|x| x.tau == 3).unwrap();
    assert_eq!((short.a, short.b, short.prob), (-1.0, 0.0, 0.5));
    assert!((long.a - 0.5).abs() < 1e-15 && long.b.abs() < 1e-15 && long.prob == 0.5);
}

#[test]
fn flower_return_times() {
    let ex = excursion_law(&flower3(), 0, 5, &OracleConfig::default()).unwrap();
    assert!((ex.prob(|x| x.tau == 1) - 0.5).abs() < 1e-15);
    assert!((ex.prob(|x| x.tau == 2) - 0.5).abs() < 1e-15);
    assert_eq!(ex.tail_mass, 0.0);
}

#[test]
fn single_state_excursions_are_the_edge_atoms() {
    let m = Model::single_state(&[(0.3, 2.0, 1.0), (0.7, -0.5, 4.0)]).unwrap();
    let ex = excursion_law(&m, 0, 4, &OracleConfig::default()).unwrap();
    assert!(ex.atoms.iter().all(|x| x.tau == 1));
    assert_eq!(ex.atoms.len(), 2);
}

#[test]
fn one_state_forward_equals_backward() {
    let m = Model::single_state(&[(0.3, 2.0, 1.0), (0.7, -0.5, 4.0)]).unwrap();
    let z0 = DiscreteLaw::from_pairs([(0.0, 0.5), (1.0, 0.5)]);
    for n in 0..=6 {
        let b = enumerate_backward(&m, 0, n, &z0, &OracleConfig::default()).unwrap();
        let f = enumerate_forward(&m, 0, n, &z0, &OracleConfig::default()).unwrap();
        assert!(b.total_variation(&f, 1e-10) < 1e-12, "n = {n}");
    }
}

#[test]
fn nonreversible_forward_and_backward_differ_from_a_fixed_state() {
    let p = vec![vec![0.2, 0.8], vec![0.6, 0.4]];
    let m = Model::from_edges(
        p,
        vec![
            ((0, 0), EdgeLaw::point(0.5, 1.0)),
            ((0, 1), EdgeLaw::point(-0.7, 2.0)),
            ((1, 0), EdgeLaw::point(0.3, -1.0)),
            ((1, 1), EdgeLaw::point(1.1, 0.5)),
        ],
    )
    .unwrap();
    let z0 = DiscreteLaw::point(0.0);
    let b = enumerate_backward(&m, 0, 3, &z0, &OracleConfig::default()).unwrap();
    let f = enumerate_forward(&m, 0, 3, &z0, &OracleConfig::default()).unwrap();
    assert!(b.total_variation(&f, 1e-10) > 0.1);
}

#[test]
fn path_values_match_recomputed_sums() {
    let m = grincevicius4(0.5);
    let cfg = OracleConfig::default();
    for n in 1..=6 {
        let all = paths(&m, 0, n, 0.0, &cfg).unwrap();
        let total: f64 = all.iter().map(|p| p.prob).sum();
        assert!((total - 1.0).abs() < 1e-12);
        for p in &all {
            let mut pi = 1.0;
            let mut sum = 0.0;
            let mut fwd = 0.0;
            for k in 0..n {
                let atom = m.edge(p.states[k], p.states[k + 1]).unwrap().atoms[p.coeff_choices[k]];
                sum += pi * atom.b;
                pi *= atom.a;
                fwd = atom.a * fwd + atom.b;
            }
            assert!((p.backward_value - sum).abs() < 1e-12);
            assert!((p.forward_value - fwd).abs() < 1e-12);
            assert!((p.pi_n - pi).abs() < 1e-15);
        }
        let law = enumerate_backward(&m, 0, n, &DiscreteLaw::point(0.0), &cfg).unwrap();
        let from_paths = DiscreteLaw::from_pairs(all.iter().map(|p| (p.backward_value, p.prob)));
        assert!(law.total_variation(&from_paths, 1e-10) < 1e-12);
    }
}
