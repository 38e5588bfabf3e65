use approx::assert_relative_eq;
use sprt_exact::phasetype::PhaseTypeDist;
use sprt_exact::solver::{
    bayes_optimal, likelihood_boundaries, optimality_region, penalty, posterior_boundaries, solve_boundaries,
    ImmediateStop, PenaltySpec, DEFAULT_TOL,
};
use sprt_exact::sprt::{errors, expected_n};
use sprt_exact::{Boundaries, Error, ErrorPair, Hypothesis, TestProblem};

#[test]
fn solved_boundaries_reproduce_targets() {
    let problems = [
        TestProblem::erlang_rho(2, 0.2).unwrap(),
        TestProblem::erlang_rho(2, 0.7).unwrap(),
        TestProblem::erlang_rho(3, 0.5).unwrap(),
        TestProblem::new(PhaseTypeDist::erlang(1, 2.0).unwrap(), 0.5).unwrap(),
    ];
    for problem in &problems {
        for (a0, a1) in [(0.05, 0.025), (0.1, 0.1), (0.01, 0.05)] {
            let t = ErrorPair::new(a0, a1).unwrap();
            let bounds = solve_boundaries(problem, &t, DEFAULT_TOL).unwrap();
            assert!(bounds.a < 0.0 && bounds.b > 0.0);
            let e = errors(problem, &bounds).unwrap();
            assert!((e.alpha0 - a0).abs() < 1e-10, "{e:?}");
            assert!((e.alpha1 - a1).abs() < 1e-10, "{e:?}");
        }
    }
}

#[test]
fn general_law_round_trip() {
    let ph = PhaseTypeDist::hyperexponential(&[0.4, 0.6], &[0.7, 3.0]).unwrap();
    let problem = TestProblem::new(ph, 1.0).unwrap();
    let t = ErrorPair::new(0.1, 0.1).unwrap();
    let bounds = solve_boundaries(&problem, &t, 1e-7).unwrap();
    let e = errors(&problem, &bounds).unwrap();
    assert!((e.alpha0 - 0.1).abs() < 1e-7 && (e.alpha1 - 0.1).abs() < 1e-7, "{e:?}");
}

#[test]
fn target_outside_region_is_rejected() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let region = optimality_region(&problem, 10).unwrap();
    let far = ErrorPair::new(region.star_point.alpha0 + 0.05, region.star_point.alpha1 + 0.05).unwrap();
    assert!(!region.contains(&far));
    let err = solve_boundaries(&problem, &far, DEFAULT_TOL).unwrap_err();
    assert!(matches!(err, Error::OutsideOptimalityRegion(_)), "{err:?}");
    assert!(solve_boundaries(&problem, &ErrorPair::new(0.6, 0.5).unwrap(), DEFAULT_TOL)
        .unwrap_err()
        .is_validation());
}

#[test]
fn region_contains_classical_target() {
    for rho in [1.0 / 6.0, 0.5, 5.0 / 6.0] {
        let problem = TestProblem::erlang_rho(2, rho).unwrap();
        let region = optimality_region(&problem, 20).unwrap();
        assert!(region.contains(&ErrorPair::new(0.05, 0.025).unwrap()));
        assert_eq!(region.lower_curve.last(), Some(&region.star_point));
        assert_eq!(region.upper_curve.last(), Some(&region.star_point));
        // b = 0 branch has alpha0 on the sampled grid
        for (k, p) in region.lower_curve.iter().enumerate() {
            assert_relative_eq!(p.alpha0, region.star_point.alpha0 * (k + 1) as f64 / 20.0, max_relative = 1e-12);
        }
    }
}

#[test]
fn region_shrinks_as_hypotheses_merge() {
    // closer hypotheses (rho -> 1) leave larger errors at the star point
    let star = |rho| {
        optimality_region(&TestProblem::erlang_rho(2, rho).unwrap(), 4)
            .unwrap()
            .star_point
    };
    let (s1, s2) = (star(0.2), star(0.8));
    assert!(s2.alpha0 + s2.alpha1 > s1.alpha0 + s1.alpha1);
}

#[test]
fn posterior_map_round_trip() {
    let bounds = Boundaries::new(-1.7, 2.3).unwrap();
    for pi in [0.1, 0.3, 0.5, 0.9] {
        let post = posterior_boundaries(&bounds, pi).unwrap();
        assert!(post.a_star < post.b_star);
        let (a, b) = likelihood_boundaries(&post, pi).unwrap();
        assert!((a - bounds.a).abs() < 1e-12 && (b - bounds.b).abs() < 1e-12);
    }
    // at pi = 1/2 the thresholds are logistic(a), logistic(b)
    let post = posterior_boundaries(&bounds, 0.5).unwrap();
    assert_relative_eq!(post.a_star, 1.0 / (1.0 + 1.7f64.exp()), max_relative = 1e-14);
    assert!(posterior_boundaries(&bounds, 0.0).unwrap_err().is_validation());
}

#[test]
fn penalty_combines_components() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let bounds = Boundaries::new(-1.0, 1.0).unwrap();
    let spec = PenaltySpec::new(0.3, 0.1, 1.0, 2.0).unwrap();
    let e = errors(&problem, &bounds).unwrap();
    let n0 = expected_n(&problem, &bounds, Hypothesis::H0).unwrap();
    let n1 = expected_n(&problem, &bounds, Hypothesis::H1).unwrap();
    let expect = 0.3 * (0.1 * n0 + e.alpha0) + 0.7 * (0.1 * n1 + 2.0 * e.alpha1);
    assert_relative_eq!(penalty(&problem, &spec, &bounds).unwrap(), expect, max_relative = 1e-9);
}

#[test]
fn certain_prior_stops_immediately() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let h1 = bayes_optimal(&problem, &PenaltySpec::new(0.0, 0.1, 1.0, 2.0).unwrap(), 1e-8).unwrap();
    assert_eq!(h1.immediate, Some(ImmediateStop::AcceptH1));
    assert_eq!(h1.penalty, 0.0);
    assert!(!h1.is_unique());
    let h0 = bayes_optimal(&problem, &PenaltySpec::new(1.0, 0.1, 1.0, 2.0).unwrap(), 1e-8).unwrap();
    assert_eq!(h0.immediate, Some(ImmediateStop::AcceptH0));
}

#[test]
fn bayes_optimum_is_local_minimum() {
    let problem = TestProblem::erlang_rho(2, 0.3).unwrap();
    let spec = PenaltySpec::new(0.5, 0.1, 1.0, 2.0).unwrap();
    let out = bayes_optimal(&problem, &spec, 1e-10).unwrap();
    assert!(out.is_unique() && out.immediate.is_none());
    let best = out.penalty;
    for (da, db) in [(0.02, 0.0), (-0.02, 0.0), (0.0, 0.02), (0.0, -0.02)] {
        let b = Boundaries::new(out.bounds.a + da, out.bounds.b + db).unwrap();
        assert!(penalty(&problem, &spec, &b).unwrap() >= best - 1e-12);
    }
    // the immediate stops cost 0.5 and 1.0 here
    assert!(best < 0.5);
}
