//! Acceptance checks with runtime limits. Prints one PASS/FAIL line per check
//! and exits nonzero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use sprt_exact::phasetype::PhaseTypeDist;
use sprt_exact::quad::integrate;
use sprt_exact::scale::{erlang_w, general_w, tilted_w, MapModel, ScaleMatrix, DEFAULT_INVERSION_TOL};
use sprt_exact::sim::{self, SimConfig};
use sprt_exact::solver::{bayes_optimal, optimality_region, solve_boundaries, PenaltySpec, DEFAULT_TOL};
use sprt_exact::sprt::{b_bounds, errors, expected_n, pgf_n, wald_bounds};
use sprt_exact::{Boundaries, ErrorPair, Hypothesis, TestProblem};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lib<T>(r: sprt_exact::Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("{}: {e}", e.name()))
}

fn target() -> ErrorPair {
    ErrorPair::new(0.05, 0.025).unwrap()
}

/// `P(Erlang(n, rate) <= x)`.
fn erlang_cdf(n: usize, rate: f64, x: f64) -> f64 {
    let y = rate * x;
    let mut term = 1.0;
    let mut sum = 0.0;
    for k in 0..n {
        if k > 0 {
            term *= y / k as f64;
        }
        sum += term;
    }
    1.0 - (-y).exp() * sum
}

fn scale_identity() -> Check {
    let mut worst = 0.0f64;
    for n in 1..=3 {
        for lambda in [0.5, 1.0, 2.0] {
            for d in [0.5, 1.0] {
                let w = lib(erlang_w(lambda, d, n, 1.0, 0.0))?;
                worst = worst.max((w - DMatrix::<f64>::identity(n, n)).amax());
            }
        }
    }
    ensure(worst < 1e-12, || format!("max |W(0) - I| = {worst:e}"))?;
    Ok(format!("max |W(0) - I| = {worst:e}"))
}

fn transform_identity() -> Check {
    let model = MapModel::new(lib(PhaseTypeDist::erlang(2, 1.0))?, 1.0, 1.0, 1.0).unwrap();
    let upper = 14.0;
    let breaks: Vec<f64> = (1..14).map(f64::from).collect();
    let mut worst = 0.0f64;
    for s in [8.0, 12.0] {
        let flat = lib(integrate(
            |x| {
                let w = erlang_w(1.0, 1.0, 2, 1.0, x)? * (-s * x).exp();
                Ok(nalgebra::DVector::from_column_slice(w.as_slice()))
            },
            0.0,
            upper,
            &breaks,
            1e-14,
            1e-12,
        ))?;
        let lhs = DMatrix::from_column_slice(2, 2, flat.as_slice());
        let rhs = model.f_matrix(s).try_inverse().ok_or("F(s) singular")?;
        worst = worst.max((lhs - rhs).amax());
    }
    ensure(worst < 1e-6, || format!("max entry error {worst:e}"))?;
    Ok(format!("max entry error {worst:e}"))
}

fn tilt_similarity() -> Check {
    let problem = lib(TestProblem::erlang_rho(2, 0.5))?;
    let ph1 = problem.ph1().erlang_shape().ok_or("tilted law is not Erlang")?;
    ensure(ph1.n == 2 && (ph1.rate - 2.0).abs() < 1e-12, || format!("tilted law {ph1:?}"))?;
    ensure((problem.d() - 2.0 * 2f64.ln()).abs() < 1e-14, || format!("d = {}", problem.d()))?;
    let direct_model = MapModel::new(lib(PhaseTypeDist::erlang(2, 2.0))?, 1.0, problem.d(), 1.0).unwrap();
    let direct = ScaleMatrix::new(direct_model);
    let mut worst = 0.0f64;
    for x in [0.1, 0.7, 1.5, 3.0, 6.0] {
        let a = lib(tilted_w(problem.scale(Hypothesis::H0), problem.delta(), x))?;
        let b = lib(direct.eval(x))?;
        for (u, v) in a.iter().zip(b.iter()) {
            let err = if *v == 0.0 { u.abs() } else { (u - v).abs() / v.abs() };
            worst = worst.max(err);
        }
    }
    ensure(worst < 1e-8, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e}"))
}

fn exponential_closed_form() -> Check {
    let problem = lib(TestProblem::new(lib(PhaseTypeDist::erlang(1, 1.0))?, 1.0))?;
    let t = target();
    let bounds = lib(solve_boundaries(&problem, &t, DEFAULT_TOL))?;
    let expected_b = ((1.0 - t.alpha0) / t.alpha1).ln() - 2f64.ln();
    let e = lib(errors(&problem, &bounds))?;
    let db = (bounds.b - expected_b).abs();
    let de = (e.alpha0 - t.alpha0).abs().max((e.alpha1 - t.alpha1).abs());
    ensure(db < 1e-8 && de < 1e-8, || {
        format!("b = {} vs log((1-alpha0)/alpha1) - log 2 = {expected_b}, error gap {de:e}", bounds.b)
    })?;
    Ok(format!(
        "b = {:.15} = log(0.95/0.025) - log 2 (diff {db:e}), errors within {de:e}",
        bounds.b
    ))
}

fn inversion_vs_closed_form() -> Check {
    let model = MapModel::new(lib(PhaseTypeDist::erlang(2, 1.0))?, 1.0, 1.0, 1.0).unwrap();
    let mut worst = 0.0f64;
    for x in [0.5, 2.5] {
        let a = lib(general_w(&model, x, DEFAULT_INVERSION_TOL))?;
        let b = lib(erlang_w(1.0, 1.0, 2, 1.0, x))?;
        for (u, v) in a.iter().zip(b.iter()) {
            let err = if *v == 0.0 { u.abs() } else { (u - v).abs() / v.abs() };
            worst = worst.max(err);
        }
    }
    ensure(worst < 1e-6, || format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:e}"))
}

fn monte_carlo() -> Check {
    let exp_problem = lib(TestProblem::new(lib(PhaseTypeDist::erlang(1, 1.0))?, 1.0))?;
    let erl_problem = lib(TestProblem::erlang_rho(2, 0.5))?;
    let erl_bounds = lib(solve_boundaries(&erl_problem, &target(), DEFAULT_TOL))?;
    let cases = [
        ("Erlang(1) (-3, 2)", exp_problem, Boundaries { a: -3.0, b: 2.0 }),
        ("Erlang(2) rho=0.5", erl_problem, erl_bounds),
    ];
    let config = SimConfig::new(1_000_000, 20_240_601);
    let mut worst = 0.0f64;
    for (label, problem, bounds) in &cases {
        let e = lib(errors(problem, bounds))?;
        for h in [Hypothesis::H0, Hypothesis::H1] {
            let r = lib(sim::run(problem, bounds, h, &config, &[]))?;
            ensure(r.capped_count == 0, || format!("{label}: {} capped paths", r.capped_count))?;
            let en = lib(expected_n(problem, bounds, h))?;
            let (alpha_hat, alpha) = match h {
                Hypothesis::H0 => (r.alpha0_hat.unwrap(), e.alpha0),
                Hypothesis::H1 => (r.alpha1_hat.unwrap(), e.alpha1),
            };
            for (what, z) in [("alpha", alpha_hat.z_score(alpha)), ("E N", r.mean_n.z_score(en))] {
                worst = worst.max(z);
                ensure(z < 3.5, || format!("{label} {h:?} {what}: {z:.2} standard errors"))?;
            }
        }
    }
    Ok(format!("8 estimates, max deviation {worst:.2} standard errors"))
}

fn derivative_relation() -> Check {
    let sets = [
        (lib(TestProblem::new(lib(PhaseTypeDist::erlang(1, 1.0))?, 1.0))?, Boundaries { a: -3.0, b: 2.0 }),
        (lib(TestProblem::erlang_rho(2, 0.5))?, Boundaries { a: -2.5, b: 3.0 }),
    ];
    let h = 1e-6;
    let mut worst = 0.0f64;
    for (problem, bounds) in &sets {
        for hyp in [Hypothesis::H0, Hypothesis::H1] {
            let g = lib(pgf_n(problem, bounds, 1.0 - h, hyp))?;
            let en = lib(expected_n(problem, bounds, hyp))?;
            let rel = ((1.0 - g) / h - en).abs() / en;
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-3, || format!("max relative gap {worst:e}"))?;
    Ok(format!("4 comparisons, max relative gap {worst:e}"))
}

fn boundary_sweep() -> Check {
    let t = target();
    let (wald_a, wald_b) = lib(wald_bounds(&t))?;
    let mut gaps = Vec::new();
    for k in 3..=9 {
        let rho = k as f64 / 10.0;
        let problem = lib(TestProblem::erlang_rho(2, rho))?;
        let bounds = lib(solve_boundaries(&problem, &t, DEFAULT_TOL))?;
        let (lo, hi) = lib(b_bounds(&problem, &t))?;
        ensure(wald_a <= bounds.a && bounds.b <= wald_b, || {
            format!("rho = {rho}: ({}, {}) outside Wald bounds ({wald_a}, {wald_b})", bounds.a, bounds.b)
        })?;
        ensure(lo <= bounds.b && bounds.b <= hi, || {
            format!("rho = {rho}: b = {} outside [{lo}, {hi}]", bounds.b)
        })?;
        gaps.push(wald_b - bounds.b);
    }
    ensure(gaps.windows(2).all(|w| w[1] <= w[0]), || format!("gaps {gaps:?}"))?;
    Ok(format!(
        "7 nodes inside both bounds, gap {:.4} -> {:.4}",
        gaps[0],
        gaps[gaps.len() - 1]
    ))
}

fn bayes_prior_invariance() -> Check {
    let spec = |pi| PenaltySpec::new(pi, 0.1, 1.0, 2.0).unwrap();
    let run = |rho, pi| -> std::result::Result<_, String> {
        let problem = lib(TestProblem::erlang_rho(2, rho))?;
        lib(bayes_optimal(&problem, &spec(pi), 1e-10))
    };
    let low = run(0.3, 0.3)?.posterior.ok_or("rho = 0.3, pi = 0.3 not unique")?;
    let high = run(0.3, 0.7)?.posterior.ok_or("rho = 0.3, pi = 0.7 not unique")?;
    let gap = (low.a_star - high.a_star).abs().max((low.b_star - high.b_star).abs());
    ensure(gap < 1e-4, || format!("rho = 0.3: {low:?} vs {high:?}"))?;
    ensure(run(0.6, 0.7)?.is_unique(), || "rho = 0.6, pi = 0.7 not unique".into())?;
    ensure(!run(0.6, 0.3)?.is_unique(), || "rho = 0.6, pi = 0.3 reported unique".into())?;
    ensure(run(0.35, 0.3)?.is_unique() && !run(0.45, 0.3)?.is_unique(), || {
        "pi = 0.3 loses uniqueness outside (0.35, 0.45)".into()
    })?;
    Ok(format!(
        "rho = 0.3: (a*, b*) = ({:.6}, {:.6}) for both priors (gap {gap:e}); \
         rho = 0.6, pi = 0.3 flagged non-unique; crossover in (0.35, 0.45)",
        low.a_star, low.b_star
    ))
}

fn region_consistency() -> Check {
    let mut worst = 0.0f64;
    for rho in [1.0 / 6.0, 0.5, 5.0 / 6.0] {
        let problem = lib(TestProblem::erlang_rho(2, rho))?;
        let region = lib(optimality_region(&problem, 25))?;
        let at_origin = lib(errors(&problem, &Boundaries { a: 0.0, b: 0.0 }))?;
        // one observation decides: Lambda_1 <= 0 iff zeta <= d / theta
        let cut = problem.d() / problem.theta();
        let lambda0 = rho / (1.0 - rho);
        let lambda1 = 1.0 / (1.0 - rho);
        let oracle = (erlang_cdf(2, lambda0, cut), 1.0 - erlang_cdf(2, lambda1, cut));
        for p in [region.star_point, at_origin] {
            worst = worst
                .max((p.alpha0 - oracle.0).abs())
                .max((p.alpha1 - oracle.1).abs());
        }
        let lower = &region.lower_curve;
        let upper = &region.upper_curve;
        ensure(
            lower.windows(2).all(|w| w[1].alpha0 > w[0].alpha0 && w[1].alpha1 <= w[0].alpha1),
            || format!("rho = {rho}: b = 0 curve not monotone"),
        )?;
        ensure(
            upper.windows(2).all(|w| w[1].alpha1 > w[0].alpha1 && w[1].alpha0 <= w[0].alpha0),
            || format!("rho = {rho}: a = 0 curve not monotone"),
        )?;
    }
    ensure(worst < 1e-10, || format!("star point off by {worst:e}"))?;
    Ok(format!("star point within {worst:e} of the one-step oracle, curves monotone"))
}

fn main() -> ExitCode {
    let checks: [(&str, fn() -> Check, u64); 10] = [
        ("scale function W(0) = I", scale_identity, 1),
        ("transform identity", transform_identity, 10),
        ("tilted scale similarity", tilt_similarity, 1),
        ("exponential closed form", exponential_closed_form, 5),
        ("general inversion vs closed form", inversion_vs_closed_form, 30),
        ("Monte Carlo agreement", monte_carlo, 120),
        ("derivative relation", derivative_relation, 5),
        ("boundary sweep", boundary_sweep, 120),
        ("Bayesian prior invariance", bayes_prior_invariance, 120),
        ("optimality region", region_consistency, 60),
    ];
    let mut failed = 0;
    for (name, check, limit) in checks {
        let start = Instant::now();
        let outcome = check();
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(msg) if elapsed > Duration::from_secs(limit) => Err(format!("{msg}; over the {limit} s limit")),
            other => other,
        };
        let secs = elapsed.as_secs_f64();
        match outcome {
            Ok(msg) => println!("PASS  {name} [{secs:.2} s / {limit} s]: {msg}"),
            Err(msg) => {
                failed += 1;
                println!("FAIL  {name} [{secs:.2} s / {limit} s]: {msg}");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} acceptance check(s) failed");
        ExitCode::FAILURE
    }
}
