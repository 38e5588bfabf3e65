//! Forward analysis of the test: exact errors, bounds on the boundaries, the
//! expected sample size and the generating function of the sample count.
//!
//! The log-likelihood ratio `Lambda_k` is a random walk with increments
//! `theta zeta - d`; exit below `a` accepts H1, exit above `b` accepts H0.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};
use crate::phasetype::{PhaseTypeDist, TiltResult};
use crate::scale::{MapModel, ScaleMatrix, ScaleMethod};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Hypothesis {
    H0,
    H1,
}

/// How H1-side sample-size functionals are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum H1Route {
    /// Through the H0 scale function and the similarity `W1 = e^x Delta^{-1} W0 Delta`.
    ViaNull,
    /// From the tilted parameters directly.
    Direct,
    /// Both, failing with `RouteMismatch` if they disagree.
    Both,
}

#[derive(Debug, Clone)]
pub struct TestProblem {
    ph0: PhaseTypeDist,
    theta: f64,
    tilted: TiltResult,
    w0: ScaleMatrix,
    w1: ScaleMatrix,
}

impl TestProblem {
    pub fn new(ph0: PhaseTypeDist, theta: f64) -> Result<Self> {
        let tilted = ph0.tilt(theta)?;
        let w0 = ScaleMatrix::new(MapModel::new(ph0.clone(), theta, tilted.d, 1.0)?);
        let w1 = ScaleMatrix::new(MapModel::new(tilted.tilted.clone(), theta, tilted.d, 1.0)?);
        Ok(Self {
            ph0,
            theta,
            tilted,
            w0,
            w1,
        })
    }

    /// Erlang(`n`) problem in the one-parameter form `theta = 1`,
    /// `lambda0 = rho / (1 - rho)`, `lambda1 = 1 / (1 - rho)`.
    pub fn erlang_rho(n: usize, rho: f64) -> Result<Self> {
        check_param("rho", rho, rho > 0.0 && rho < 1.0, "must lie in (0, 1)")?;
        Self::new(PhaseTypeDist::erlang(n, rho / (1.0 - rho))?, 1.0)
    }

    /// Forces the scale evaluation method on both hypotheses.
    pub fn with_method(mut self, method: ScaleMethod) -> Result<Self> {
        self.w0 = ScaleMatrix::with_method(self.w0.model().clone(), method)?;
        self.w1 = ScaleMatrix::with_method(self.w1.model().clone(), method)?;
        Ok(self)
    }

    pub fn ph0(&self) -> &PhaseTypeDist {
        &self.ph0
    }

    pub fn ph1(&self) -> &PhaseTypeDist {
        &self.tilted.tilted
    }

    pub fn ph(&self, h: Hypothesis) -> &PhaseTypeDist {
        match h {
            Hypothesis::H0 => self.ph0(),
            Hypothesis::H1 => self.ph1(),
        }
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn d(&self) -> f64 {
        self.tilted.d
    }

    pub fn delta(&self) -> &DVector<f64> {
        &self.tilted.delta
    }

    pub fn tilted(&self) -> &TiltResult {
        &self.tilted
    }

    pub fn scale(&self, h: Hypothesis) -> &ScaleMatrix {
        match h {
            Hypothesis::H0 => &self.w0,
            Hypothesis::H1 => &self.w1,
        }
    }

    /// `theta E_h zeta - d`, the drift of the log-likelihood ratio.
    pub fn drift(&self, h: Hypothesis) -> f64 {
        self.theta * self.ph(h).mean() - self.d()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Boundaries {
    pub a: f64,
    pub b: f64,
}

impl Boundaries {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        check_param("a", a, a <= 0.0, "lower boundary must be nonpositive")?;
        check_param("b", b, b >= 0.0, "upper boundary must be nonnegative")?;
        Ok(Self { a, b })
    }

    fn interior(&self) -> Result<()> {
        check_param("a", self.a, self.a < 0.0, "lower boundary must be negative")?;
        check_param("b", self.b, self.b > 0.0, "upper boundary must be positive")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPair {
    pub alpha0: f64,
    pub alpha1: f64,
}

impl ErrorPair {
    pub fn new(alpha0: f64, alpha1: f64) -> Result<Self> {
        check_param("alpha0", alpha0, (0.0..=1.0).contains(&alpha0), "must lie in [0, 1]")?;
        check_param("alpha1", alpha1, (0.0..=1.0).contains(&alpha1), "must lie in [0, 1]")?;
        Ok(Self { alpha0, alpha1 })
    }

    /// Checks `alpha0, alpha1 > 0` and `alpha0 + alpha1 < 1`.
    pub fn check_target(&self) -> Result<()> {
        let ok = self.alpha0 > 0.0 && self.alpha1 > 0.0 && self.alpha0 + self.alpha1 < 1.0;
        if ok && self.alpha0.is_finite() && self.alpha1.is_finite() {
            Ok(())
        } else {
            Err(Error::DegenerateTargets {
                alpha0: self.alpha0,
                alpha1: self.alpha1,
            })
        }
    }
}

/// Arguments `(-a, -a + b + d)` of the scale function.
fn args(problem: &TestProblem, bounds: &Boundaries) -> (f64, f64) {
    (-bounds.a, -bounds.a + bounds.b + problem.d())
}

/// Clamps rounding noise into `[0, 1]`.
fn probability(p: f64, what: &str) -> Result<f64> {
    if !p.is_finite() || !(-1e-9..=1.0 + 1e-9).contains(&p) {
        return Err(Error::IllConditionedSolve(format!("{what} = {p} is not a probability")));
    }
    Ok(p.clamp(0.0, 1.0))
}

/// Exact error probabilities for the boundaries `(a, b)`.
pub fn errors(problem: &TestProblem, bounds: &Boundaries) -> Result<ErrorPair> {
    Boundaries::new(bounds.a, bounds.b)?;
    let (x1, x2) = args(problem, bounds);
    let y = problem.w0.exit_row(problem.ph0.initial(), x1, x2)?;
    let alpha0 = probability(1.0 - y.sum(), "alpha0")?;
    let alpha1 = probability((-bounds.b).exp() * y.dot(problem.delta()), "alpha1")?;
    Ok(ErrorPair { alpha0, alpha1 })
}

/// Wald's bounds `a >= log(alpha0 / (1 - alpha1))`, `b <= log((1 - alpha0) / alpha1)`.
///
/// Exit above accepts H0, so `P0(accept H0) >= e^b P1(accept H0)` and
/// `P0(accept H1) <= e^a P1(accept H1)`.
pub fn wald_bounds(target: &ErrorPair) -> Result<(f64, f64)> {
    target.check_target()?;
    Ok((
        (target.alpha0 / (1.0 - target.alpha1)).ln(),
        ((1.0 - target.alpha0) / target.alpha1).ln(),
    ))
}

/// Bounds on `b` from the extreme entries `m`, `M` of `(theta I - T0)^{-1} t0`.
pub fn b_bounds(problem: &TestProblem, target: &ErrorPair) -> Result<(f64, f64)> {
    target.check_target()?;
    let base = ((1.0 - target.alpha0) / target.alpha1).ln();
    let delta = problem.delta();
    let m = delta.min();
    let big_m = delta.max();
    Ok((base + m.ln(), base + big_m.ln()))
}

/// Relative agreement demanded of the two H1 routes.
fn route_tolerance(problem: &TestProblem) -> f64 {
    match problem.w0.method() {
        ScaleMethod::ErlangClosedForm => 1e-8,
        ScaleMethod::TransformInversion { .. } => 1e-6,
    }
}

/// `E_h N` for interior boundaries; H1 is computed by both routes and cross-checked.
pub fn expected_n(problem: &TestProblem, bounds: &Boundaries, hypothesis: Hypothesis) -> Result<f64> {
    match hypothesis {
        Hypothesis::H0 => expected_n0(problem, bounds),
        Hypothesis::H1 => expected_n1(problem, bounds, H1Route::Both),
    }
}

pub(crate) fn expected_n0(problem: &TestProblem, bounds: &Boundaries) -> Result<f64> {
    bounds.interior()?;
    let (x1, x2) = args(problem, bounds);
    let ph = &problem.ph0;
    let ones = DVector::from_element(ph.phases(), 1.0);
    problem
        .w0
        .count_kernel(ph.initial(), ph.exit_rates(), &ones, 0.0, x1, x2)
}

/// `E_1 N` by the chosen route.
pub fn expected_n1(problem: &TestProblem, bounds: &Boundaries, route: H1Route) -> Result<f64> {
    bounds.interior()?;
    let (x1, x2) = args(problem, bounds);
    let via_null = || -> Result<f64> {
        let ph = &problem.ph0;
        let k = problem
            .w0
            .count_kernel(ph.initial(), ph.exit_rates(), problem.delta(), 1.0, x1, x2)?;
        Ok(k / problem.tilted.g0_theta)
    };
    let direct = || -> Result<f64> {
        let ph = problem.ph1();
        let ones = DVector::from_element(ph.phases(), 1.0);
        problem
            .w1
            .count_kernel(ph.initial(), ph.exit_rates(), &ones, 0.0, x1, x2)
    };
    match route {
        H1Route::ViaNull => via_null(),
        H1Route::Direct => direct(),
        H1Route::Both => {
            let first = via_null()?;
            let second = direct()?;
            if (first - second).abs() > route_tolerance(problem) * first.abs().max(1.0) {
                return Err(Error::RouteMismatch { first, second });
            }
            Ok(second)
        }
    }
}

/// `E_h z^N` for interior boundaries and `z` in `(0, 1]`.
pub fn pgf_n(problem: &TestProblem, bounds: &Boundaries, z: f64, hypothesis: Hypothesis) -> Result<f64> {
    check_param("z", z, z > 0.0 && z <= 1.0, "must lie in (0, 1]")?;
    bounds.interior()?;
    if z == 1.0 {
        return Ok(1.0);
    }
    let (x1, x2) = args(problem, bounds);
    let base = problem.scale(hypothesis);
    let killed = ScaleMatrix::with_method(base.model().killed(z)?, base.method())?;
    let v = killed.pgf_kernel(problem.ph(hypothesis).initial(), x1, x2)?;
    probability(v, "E z^N")
}
