use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use sprt_exact::phasetype::PhaseTypeDist;
use sprt_exact::sprt::{
    b_bounds, errors, expected_n, expected_n1, pgf_n, wald_bounds, H1Route,
};
use sprt_exact::{Boundaries, Error, ErrorPair, Hypothesis, TestProblem};

/// Mixture of Erlang(n, rate_i) laws with a shared shape, in closed form.
#[derive(Clone)]
struct MixErlang {
    n: usize,
    weights: Vec<f64>,
    rates: Vec<f64>,
}

impl MixErlang {
    fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            return 0.0;
        }
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, r)| {
                let y = r * x;
                let mut term = 1.0;
                let mut sum = 1.0;
                for k in 1..self.n {
                    term *= y / k as f64;
                    sum += term;
                }
                w * (1.0 - (-y).exp() * sum)
            })
            .sum()
    }

    fn lst(&self, theta: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.rates)
            .map(|(w, r)| w * (r / (r + theta)).powi(self.n as i32))
            .sum()
    }

    fn tilt(&self, theta: f64) -> MixErlang {
        let g = self.lst(theta);
        MixErlang {
            n: self.n,
            weights: self
                .weights
                .iter()
                .zip(&self.rates)
                .map(|(w, r)| w * (r / (r + theta)).powi(self.n as i32) / g)
                .collect(),
            rates: self.rates.iter().map(|r| r + theta).collect(),
        }
    }
}

/// `(P(exit above), E N)` from `Lambda_0 = 0` by product-integration Nystrom on
/// `m` cells of `(a, b)`.
fn nystrom(law: &MixErlang, theta: f64, d: f64, a: f64, b: f64, m: usize) -> (f64, f64) {
    let h = (b - a) / m as f64;
    let mid = |j: usize| a + (j as f64 + 0.5) * h;
    // mass the step from x puts on cell j
    let cell = |x: f64, j: usize| {
        let lo = a + j as f64 * h;
        law.cdf((lo + h - x + d) / theta) - law.cdf((lo - x + d) / theta)
    };
    let over = |x: f64| 1.0 - law.cdf((b - x + d) / theta);
    let mut sys = DMatrix::identity(m, m);
    for i in 0..m {
        for j in 0..m {
            sys[(i, j)] -= cell(mid(i), j);
        }
    }
    let lu = sys.lu();
    let u = lu.solve(&DVector::from_fn(m, |i, _| over(mid(i)))).unwrap();
    let n = lu.solve(&DVector::from_element(m, 1.0)).unwrap();
    let at_zero = |v: &DVector<f64>, base: f64| base + (0..m).map(|j| cell(0.0, j) * v[j]).sum::<f64>();
    (at_zero(&u, over(0.0)), at_zero(&n, 1.0))
}

fn richardson(law: &MixErlang, theta: f64, d: f64, a: f64, b: f64) -> (f64, f64) {
    let (u1, n1) = nystrom(law, theta, d, a, b, 300);
    let (u2, n2) = nystrom(law, theta, d, a, b, 600);
    ((4.0 * u2 - u1) / 3.0, (4.0 * n2 - n1) / 3.0)
}

fn check_against_oracle(problem: &TestProblem, law0: &MixErlang, bounds: Boundaries, tol: f64) {
    let theta = problem.theta();
    let law1 = law0.tilt(theta);
    let d = -law0.lst(theta).ln();
    assert_relative_eq!(d, problem.d(), max_relative = 1e-13);
    let (up0, en0) = richardson(law0, theta, d, bounds.a, bounds.b);
    let (up1, en1) = richardson(&law1, theta, d, bounds.a, bounds.b);
    let e = errors(problem, &bounds).unwrap();
    assert!((e.alpha0 - (1.0 - up0)).abs() < tol, "alpha0 {} vs {}", e.alpha0, 1.0 - up0);
    assert!((e.alpha1 - up1).abs() < tol, "alpha1 {} vs {up1}", e.alpha1);
    let n0 = expected_n(problem, &bounds, Hypothesis::H0).unwrap();
    let n1 = expected_n(problem, &bounds, Hypothesis::H1).unwrap();
    assert!((n0 - en0).abs() < tol * en0, "E0N {n0} vs {en0}");
    assert!((n1 - en1).abs() < tol * en1, "E1N {n1} vs {en1}");
}

#[test]
fn erlang_matches_integral_equation() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let law = MixErlang {
        n: 2,
        weights: vec![1.0],
        rates: vec![1.0],
    };
    check_against_oracle(&problem, &law, Boundaries::new(-2.0, 1.5).unwrap(), 1e-7);
}

#[test]
fn exponential_matches_integral_equation() {
    let problem = TestProblem::new(PhaseTypeDist::erlang(1, 1.0).unwrap(), 1.0).unwrap();
    let law = MixErlang {
        n: 1,
        weights: vec![1.0],
        rates: vec![1.0],
    };
    check_against_oracle(&problem, &law, Boundaries::new(-3.0, 2.0).unwrap(), 2e-4);
}

#[test]
fn hyperexponential_matches_integral_equation() {
    let ph = PhaseTypeDist::hyperexponential(&[0.4, 0.6], &[0.7, 3.0]).unwrap();
    let problem = TestProblem::new(ph, 1.2).unwrap();
    let law = MixErlang {
        n: 1,
        weights: vec![0.4, 0.6],
        rates: vec![0.7, 3.0],
    };
    check_against_oracle(&problem, &law, Boundaries::new(-1.5, 1.0).unwrap(), 1e-4);
}

#[test]
fn errors_monotone_in_boundaries() {
    let problem = TestProblem::erlang_rho(2, 0.4).unwrap();
    let at = |a, b| errors(&problem, &Boundaries::new(a, b).unwrap()).unwrap();
    let grid = [-4.0, -3.0, -2.0, -1.0, -0.5];
    for w in grid.windows(2) {
        let (lo, hi) = (at(w[0], 2.0), at(w[1], 2.0));
        assert!(hi.alpha0 >= lo.alpha0 && hi.alpha1 <= lo.alpha1);
    }
    for w in [0.5, 1.0, 2.0, 3.0, 4.0].windows(2) {
        let (lo, hi) = (at(-2.0, w[0]), at(-2.0, w[1]));
        assert!(hi.alpha0 >= lo.alpha0 && hi.alpha1 <= lo.alpha1);
    }
}

#[test]
fn bounds_chain() {
    let t = ErrorPair::new(0.05, 0.025).unwrap();
    let (wa, wb) = wald_bounds(&t).unwrap();
    assert_relative_eq!(wa, (0.05f64 / 0.975).ln(), max_relative = 1e-15);
    assert_relative_eq!(wb, (0.95f64 / 0.025).ln(), max_relative = 1e-15);
    let sym = wald_bounds(&ErrorPair::new(0.05, 0.05).unwrap()).unwrap();
    assert_relative_eq!(sym.0, -(19f64.ln()), max_relative = 1e-15);
    assert_relative_eq!(sym.1, 19f64.ln(), max_relative = 1e-15);
    for rho in [0.2, 0.5, 0.8] {
        let problem = TestProblem::erlang_rho(3, rho).unwrap();
        let (lo, hi) = b_bounds(&problem, &t).unwrap();
        assert!(lo < hi && hi <= wb + 1e-12);
    }
}

#[test]
fn degenerate_targets_rejected() {
    for (a0, a1) in [(0.6, 0.4), (0.0, 0.1), (0.1, 0.0)] {
        let err = wald_bounds(&ErrorPair::new(a0, a1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::DegenerateTargets { .. }));
    }
    assert!(ErrorPair::new(1.2, 0.1).unwrap_err().is_validation());
    assert!(Boundaries::new(0.5, 1.0).unwrap_err().is_validation());
}

#[test]
fn narrow_interval_stops_quickly() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let bounds = Boundaries::new(-1e-3, 1e-3).unwrap();
    for h in [Hypothesis::H0, Hypothesis::H1] {
        let en = expected_n(&problem, &bounds, h).unwrap();
        assert!((1.0..1.5).contains(&en), "{h:?}: {en}");
        let g = pgf_n(&problem, &bounds, 0.5, h).unwrap();
        assert!((g - 0.5).abs() < 0.01);
    }
}

#[test]
fn h1_routes_agree() {
    let erl = TestProblem::erlang_rho(3, 0.6).unwrap();
    let hyp = TestProblem::new(PhaseTypeDist::hyperexponential(&[0.5, 0.5], &[1.0, 2.5]).unwrap(), 1.0).unwrap();
    let bounds = Boundaries::new(-1.5, 1.2).unwrap();
    for (problem, tol) in [(&erl, 1e-9), (&hyp, 1e-6)] {
        let a = expected_n1(problem, &bounds, H1Route::ViaNull).unwrap();
        let b = expected_n1(problem, &bounds, H1Route::Direct).unwrap();
        assert_relative_eq!(a, b, max_relative = tol);
    }
    // long interval near rho = 1 leans on the integral's exponent rate
    let near = TestProblem::erlang_rho(2, 0.7680199373936896).unwrap();
    let bounds = Boundaries::new(-2.8655, 1.4946).unwrap();
    let a = expected_n1(&near, &bounds, H1Route::ViaNull).unwrap();
    let b = expected_n1(&near, &bounds, H1Route::Direct).unwrap();
    assert_relative_eq!(a, b, max_relative = 1e-9);
}

#[test]
fn pgf_monotone_and_below_z() {
    let problem = TestProblem::erlang_rho(2, 0.5).unwrap();
    let bounds = Boundaries::new(-2.0, 2.0).unwrap();
    for h in [Hypothesis::H0, Hypothesis::H1] {
        let mut prev = 0.0;
        for z in [0.1, 0.3, 0.5, 0.7, 0.9, 0.99, 1.0] {
            let g = pgf_n(&problem, &bounds, z, h).unwrap();
            assert!(g > prev && g <= z + 1e-15, "z = {z}: {g}");
            prev = g;
        }
    }
    assert!(pgf_n(&problem, &bounds, 1.5, Hypothesis::H0).unwrap_err().is_validation());
}

#[test]
fn drift_signs() {
    let problem = TestProblem::erlang_rho(2, 0.7).unwrap();
    assert!(problem.drift(Hypothesis::H0) > 0.0);
    assert!(problem.drift(Hypothesis::H1) < 0.0);
}
