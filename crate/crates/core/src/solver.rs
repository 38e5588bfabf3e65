//! Inverse problems: boundaries from target errors, the optimality region of
//! Wald's test, and boundaries minimising the Bayesian penalty.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};
use crate::rootfind::{brent, RootOptions};
use crate::sprt::{b_bounds, errors, expected_n0, expected_n1, Boundaries, ErrorPair, H1Route, TestProblem};

/// Default tolerance on achieved errors.
pub const DEFAULT_TOL: f64 = 1e-10;
/// Iteration cap per root find.
pub const MAX_ITER: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub prior: f64,
    pub c: f64,
    pub c0: f64,
    pub c1: f64,
}

impl PenaltySpec {
    pub fn new(prior: f64, c: f64, c0: f64, c1: f64) -> Result<Self> {
        check_param("prior", prior, (0.0..=1.0).contains(&prior), "must lie in [0, 1]")?;
        check_param("c", c, c > 0.0, "cost must be positive")?;
        check_param("c0", c0, c0 > 0.0, "cost must be positive")?;
        check_param("c1", c1, c1 > 0.0, "cost must be positive")?;
        Ok(Self { prior, c, c0, c1 })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionBoundary {
    pub star_point: ErrorPair,
    /// `b = 0` branch, ordered by increasing `alpha0`, ending at the star point.
    pub lower_curve: Vec<ErrorPair>,
    /// `a = 0` branch, ordered by increasing `alpha1`, ending at the star point.
    pub upper_curve: Vec<ErrorPair>,
}

impl RegionBoundary {
    /// Whether `target` lies in the region, interpolating the sampled curves.
    pub fn contains(&self, target: &ErrorPair) -> bool {
        let (x, y) = (target.alpha0, target.alpha1);
        if x <= 0.0 || y <= 0.0 || x + y >= 1.0 {
            return false;
        }
        let star = self.star_point;
        let below_lower = x < star.alpha0
            && y < interpolate(self.lower_curve.iter().map(|p| (p.alpha0, p.alpha1)), x);
        let left_of_upper = y < star.alpha1
            && x < interpolate(self.upper_curve.iter().map(|p| (p.alpha1, p.alpha0)), y);
        below_lower || left_of_upper
    }
}

/// Piecewise-linear interpolation through points sorted by abscissa, flat beyond the ends.
fn interpolate(points: impl Iterator<Item = (f64, f64)>, x: f64) -> f64 {
    let pts: Vec<(f64, f64)> = points.collect();
    let Some(first) = pts.first() else {
        return f64::NAN;
    };
    if x <= first.0 {
        return first.1;
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x <= x1 {
            if x1 == x0 {
                return y1;
            }
            return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
        }
    }
    pts.last().map(|p| p.1).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PosteriorBoundaries {
    pub a_star: f64,
    pub b_star: f64,
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Posterior-probability thresholds equivalent to `bounds` under `prior`.
pub fn posterior_boundaries(bounds: &Boundaries, prior: f64) -> Result<PosteriorBoundaries> {
    check_param("prior", prior, prior > 0.0 && prior < 1.0, "must lie in (0, 1)")?;
    let offset = ((1.0 - prior) / prior).ln();
    Ok(PosteriorBoundaries {
        a_star: logistic(bounds.a - offset),
        b_star: logistic(bounds.b - offset),
    })
}

/// Log-likelihood boundaries for posterior thresholds, the forward map.
pub fn likelihood_boundaries(post: &PosteriorBoundaries, prior: f64) -> Result<(f64, f64)> {
    check_param("prior", prior, prior > 0.0 && prior < 1.0, "must lie in (0, 1)")?;
    let offset = ((1.0 - prior) / prior).ln();
    let logit = |p: f64| (p / (1.0 - p)).ln();
    Ok((logit(post.a_star) + offset, logit(post.b_star) + offset))
}

fn opts(ftol: f64) -> RootOptions {
    RootOptions {
        ftol,
        xtol: 1e-15,
        max_iter: MAX_ITER,
    }
}

/// `-a >= 0` with `alpha0(a, b) = alpha0`, or `None` when even `a = 0` gives a
/// smaller Type I error (the lower boundary is pinned at zero).
fn solve_lower(problem: &TestProblem, b: f64, alpha0: f64, ftol: f64) -> Result<Option<f64>> {
    let f = |big_a: f64| -> Result<f64> { Ok(errors(problem, &Boundaries { a: -big_a, b })?.alpha0 - alpha0) };
    let f0 = f(0.0)?;
    if f0 <= 0.0 {
        return Ok(if f0.abs() <= ftol { Some(0.0) } else { None });
    }
    // alpha0 decreases in -a; expand until the sign flips
    let mut hi = (1.0 / alpha0).ln().max(1.0);
    let mut fhi = f(hi)?;
    let mut guard = 0;
    while fhi > 0.0 {
        hi *= 2.0;
        fhi = f(hi)?;
        guard += 1;
        if guard > 60 {
            return Err(Error::NoConvergence(format!(
                "cannot bracket the lower boundary for alpha0 = {alpha0}"
            )));
        }
    }
    Ok(Some(brent(f, 0.0, hi, f0, fhi, opts(ftol))?))
}

/// `b >= 0` with `alpha1(0, b) = alpha1`, or `None` when even `b = 0` gives a
/// smaller Type II error.
fn solve_upper_pinned(problem: &TestProblem, alpha1: f64, ftol: f64) -> Result<Option<f64>> {
    let f = |b: f64| -> Result<f64> { Ok(errors(problem, &Boundaries { a: 0.0, b })?.alpha1 - alpha1) };
    let f0 = f(0.0)?;
    if f0 <= 0.0 {
        return Ok(if f0.abs() <= ftol { Some(0.0) } else { None });
    }
    let mut hi = (1.0 / alpha1).ln().max(1.0);
    let mut fhi = f(hi)?;
    let mut guard = 0;
    while fhi > 0.0 {
        hi *= 2.0;
        fhi = f(hi)?;
        guard += 1;
        if guard > 60 {
            return Err(Error::NoConvergence(format!(
                "cannot bracket the upper boundary for alpha1 = {alpha1}"
            )));
        }
    }
    Ok(Some(brent(f, 0.0, hi, f0, fhi, opts(ftol))?))
}

/// Boundaries achieving `target` within `tol` in each error.
pub fn solve_boundaries(problem: &TestProblem, target: &ErrorPair, tol: f64) -> Result<Boundaries> {
    target.check_target()?;
    check_param("tol", tol, tol > 0.0, "must be positive")?;
    let star = errors(problem, &Boundaries { a: 0.0, b: 0.0 })?;
    if (target.alpha0 - star.alpha0).abs() <= tol && (target.alpha1 - star.alpha1).abs() <= tol {
        return Ok(Boundaries { a: 0.0, b: 0.0 });
    }
    if target.alpha0 >= star.alpha0 && target.alpha1 >= star.alpha1 {
        return Err(Error::OutsideOptimalityRegion(format!(
            "target ({}, {}) is dominated by the zero-boundary errors ({}, {})",
            target.alpha0, target.alpha1, star.alpha0, star.alpha1
        )));
    }
    let inner_tol = 0.1 * tol;
    let (b_low, b_high) = b_bounds(problem, target)?;

    // alpha1 - target along the curve alpha0 = target; `None` where a is pinned at 0
    let outer = |b: f64| -> Result<(f64, Option<f64>)> {
        match solve_lower(problem, b, target.alpha0, inner_tol)? {
            Some(big_a) => Ok((errors(problem, &Boundaries { a: -big_a, b })?.alpha1 - target.alpha1, Some(big_a))),
            None => Ok((f64::NAN, None)),
        }
    };
    let finish = |b: f64| -> Result<Boundaries> {
        match solve_lower(problem, b, target.alpha0, inner_tol)? {
            Some(big_a) if big_a > 0.0 || b == 0.0 => Ok(Boundaries { a: -big_a, b }),
            _ => Err(Error::OutsideOptimalityRegion(format!(
                "lower boundary pinned at 0 for target ({}, {})",
                target.alpha0, target.alpha1
            ))),
        }
    };

    let width = b_high - b_low;
    let pad = 1e-9 * b_high.abs().max(1.0);
    // exponential laws have m = M and the bound pins b exactly
    if width <= 1e-12 * b_high.abs().max(1.0) && b_low > 0.0 {
        let b = 0.5 * (b_low + b_high);
        let (f, a) = outer(b)?;
        if a.is_some() && f.abs() <= tol {
            return finish(b);
        }
    }
    let mut lo = (b_low - pad).max(0.0);
    let mut hi = b_high + pad;
    let (mut flo, alo) = outer(lo)?;
    if alo.is_none() {
        // find where the lower boundary leaves 0
        return Err(Error::OutsideOptimalityRegion(format!(
            "lower boundary pinned at 0 at b = {lo} for target ({}, {})",
            target.alpha0, target.alpha1
        )));
    }
    if flo < 0.0 {
        if lo == 0.0 {
            return Err(Error::OutsideOptimalityRegion(format!(
                "upper boundary would be negative for target ({}, {})",
                target.alpha0, target.alpha1
            )));
        }
        // bound violated numerically; walk down to zero
        hi = lo;
        lo = 0.0;
        let (f, a) = outer(lo)?;
        if a.is_none() || f < 0.0 {
            return Err(Error::OutsideOptimalityRegion(format!(
                "no interior solution for target ({}, {})",
                target.alpha0, target.alpha1
            )));
        }
        flo = f;
    }
    let (mut fhi, mut ahi) = outer(hi)?;
    let mut guard = 0;
    while ahi.is_none() || fhi > 0.0 {
        hi += 1.0 + hi;
        (fhi, ahi) = outer(hi)?;
        guard += 1;
        if guard > 20 {
            return Err(Error::NoConvergence("cannot bracket the upper boundary".into()));
        }
    }
    if flo.abs() <= 0.5 * tol {
        return finish(lo);
    }
    let b = brent(|b| Ok(outer(b)?.0), lo, hi, flo, fhi, opts(0.5 * tol))?;
    finish(b)
}

fn node<T>(index: usize, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| e.at_node(index))
}

/// Samples the boundary of the region of error pairs attainable with `a < 0 < b`.
pub fn optimality_region(problem: &TestProblem, grid_size: usize) -> Result<RegionBoundary> {
    if grid_size < 2 {
        return Err(Error::InvalidParameter {
            name: "grid_size",
            value: grid_size as f64,
            reason: "need at least 2 nodes",
        });
    }
    let star = errors(problem, &Boundaries { a: 0.0, b: 0.0 })?;
    let ftol = 1e-13;
    // b = 0, alpha0 swept over (0, alpha0*]
    let lower: Vec<ErrorPair> = (1..=grid_size)
        .into_par_iter()
        .map(|k| node(k - 1, || {
            if k == grid_size {
                return Ok(star);
            }
            let alpha0 = star.alpha0 * k as f64 / grid_size as f64;
            let big_a = solve_lower(problem, 0.0, alpha0, ftol)?
                .ok_or_else(|| Error::NoConvergence("lower boundary pinned on the b = 0 branch".into()))?;
            let e = errors(problem, &Boundaries { a: -big_a, b: 0.0 })?;
            Ok(ErrorPair { alpha0, alpha1: e.alpha1 })
        }))
        .collect::<Result<_>>()?;
    // a = 0, alpha1 swept over (0, alpha1*]
    let upper: Vec<ErrorPair> = (1..=grid_size)
        .into_par_iter()
        .map(|k| node(grid_size + k - 1, || {
            if k == grid_size {
                return Ok(star);
            }
            let alpha1 = star.alpha1 * k as f64 / grid_size as f64;
            let b = solve_upper_pinned(problem, alpha1, ftol)?
                .ok_or_else(|| Error::NoConvergence("upper boundary pinned on the a = 0 branch".into()))?;
            let e = errors(problem, &Boundaries { a: 0.0, b })?;
            Ok(ErrorPair { alpha0: e.alpha0, alpha1 })
        }))
        .collect::<Result<_>>()?;
    Ok(RegionBoundary {
        star_point: star,
        lower_curve: lower,
        upper_curve: upper,
    })
}

/// Immediate decision at `N = 0`, the penalty-minimising rule when the prior
/// already lies outside the posterior thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ImmediateStop {
    AcceptH0,
    AcceptH1,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BayesOutcome {
    /// Minimiser of the penalty over `a < 0 < b`; when an immediate stop wins,
    /// the boundary that would be pinned is set to 0 and the other is arbitrary.
    pub bounds: Boundaries,
    pub penalty: f64,
    /// Interior minimum of the penalty; for a prior of 0 or 1 the search is
    /// skipped and this is `c`, a lower bound over interior rules.
    pub interior_penalty: f64,
    /// `None` is the non-unique flag.
    pub posterior: Option<PosteriorBoundaries>,
    pub immediate: Option<ImmediateStop>,
}

impl BayesOutcome {
    pub fn is_unique(&self) -> bool {
        self.posterior.is_some()
    }
}

/// `gamma = pi (c E0 N + c0 alpha0) + (1 - pi)(c E1 N + c1 alpha1)` at interior boundaries.
pub fn penalty(problem: &TestProblem, spec: &PenaltySpec, bounds: &Boundaries) -> Result<f64> {
    let e = errors(problem, bounds)?;
    let pi = spec.prior;
    let mut g = 0.0;
    if pi > 0.0 {
        g += pi * (spec.c * expected_n0(problem, bounds)? + spec.c0 * e.alpha0);
    }
    if pi < 1.0 {
        g += (1.0 - pi) * (spec.c * expected_n1(problem, bounds, H1Route::Direct)? + spec.c1 * e.alpha1);
    }
    Ok(g)
}

const PROBE: f64 = 1e-3;
const FLAT: f64 = 1e-12;

/// Minimises the penalty over `a < 0 < b` from five starts, then compares with
/// stopping before the first observation.
pub fn bayes_optimal(problem: &TestProblem, spec: &PenaltySpec, tol: f64) -> Result<BayesOutcome> {
    check_param("tol", tol, tol > 0.0, "must be positive")?;
    if spec.prior == 0.0 || spec.prior == 1.0 {
        // a certain prior costs nothing to act on, while N >= 1 costs at least c
        let (immediate, bounds) = if spec.prior == 0.0 {
            (ImmediateStop::AcceptH1, Boundaries { a: 0.0, b: 1.0 })
        } else {
            (ImmediateStop::AcceptH0, Boundaries { a: -1.0, b: 0.0 })
        };
        return Ok(BayesOutcome {
            bounds,
            penalty: 0.0,
            interior_penalty: spec.c,
            posterior: None,
            immediate: Some(immediate),
        });
    }
    // a = -e^u, b = e^v keeps the search interior
    let to_bounds = |p: [f64; 2]| Boundaries {
        a: -p[0].exp(),
        b: p[1].exp(),
    };
    let objective = |p: [f64; 2]| -> Result<f64> {
        if p.iter().any(|v| !v.is_finite() || v.abs() > 6.0) {
            return Ok(f64::INFINITY);
        }
        // far corners of the box leave the f64 range; they are never minimal
        match penalty(problem, spec, &to_bounds(p)) {
            Err(Error::SeriesOverflow(_) | Error::IllConditionedSolve(_)) => Ok(f64::INFINITY),
            other => other,
        }
    };
    let starts = [(0.25, 0.25), (1.0, 1.0), (4.0, 4.0), (0.25, 4.0), (4.0, 0.25)];
    let runs: Vec<([f64; 2], f64)> = starts
        .par_iter()
        .map(|&(a, b): &(f64, f64)| {
            let first = nelder_mead(&objective, [a.ln(), b.ln()], 0.5, tol)?;
            nelder_mead(&objective, first.0, 0.05, tol)
        })
        .collect::<Result<_>>()?;
    let (best, interior) = runs
        .into_iter()
        .min_by(|x, y| x.1.total_cmp(&y.1))
        .expect("non-empty starts");
    if !interior.is_finite() {
        return Err(Error::NoConvergence("penalty minimisation found no finite value".into()));
    }
    let bounds = to_bounds(best);
    let pi = spec.prior;
    let stop_h1 = pi * spec.c0;
    let stop_h0 = (1.0 - pi) * spec.c1;
    let immediate = if stop_h1 <= interior && stop_h1 <= stop_h0 {
        Some(ImmediateStop::AcceptH1)
    } else if stop_h0 <= interior {
        Some(ImmediateStop::AcceptH0)
    } else {
        None
    };
    let penalty_value = match immediate {
        Some(ImmediateStop::AcceptH1) => stop_h1,
        Some(ImmediateStop::AcceptH0) => stop_h0,
        None => interior,
    };
    let reported = match immediate {
        Some(ImmediateStop::AcceptH1) => Boundaries { a: 0.0, b: bounds.b },
        Some(ImmediateStop::AcceptH0) => Boundaries { a: bounds.a, b: 0.0 },
        None => bounds,
    };
    let unique = immediate.is_none() && pi > 0.0 && pi < 1.0 && probe_unique(problem, spec, &bounds, interior)?;
    let posterior = if unique {
        Some(posterior_boundaries(&bounds, pi)?)
    } else {
        None
    };
    Ok(BayesOutcome {
        bounds: reported,
        penalty: penalty_value,
        interior_penalty: interior,
        posterior,
        immediate,
    })
}

/// Local uniqueness: the minimiser stays away from the axes and the penalty
/// rises when either boundary moves by `PROBE`.
fn probe_unique(problem: &TestProblem, spec: &PenaltySpec, bounds: &Boundaries, value: f64) -> Result<bool> {
    if -bounds.a < 1e-6 || bounds.b < 1e-6 {
        return Ok(false);
    }
    for (da, db) in [(PROBE, 0.0), (-PROBE, 0.0), (0.0, PROBE), (0.0, -PROBE)] {
        let moved = Boundaries {
            a: (bounds.a + da).min(-1e-12),
            b: (bounds.b + db).max(1e-12),
        };
        let g = penalty(problem, spec, &moved)?;
        if g - value <= FLAT {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Nelder-Mead on two variables; returns the best vertex and its value.
fn nelder_mead<F>(f: &F, start: [f64; 2], step: f64, tol: f64) -> Result<([f64; 2], f64)>
where
    F: Fn([f64; 2]) -> Result<f64>,
{
    let mut simplex = [start, [start[0] + step, start[1]], [start[0], start[1] + step]];
    let mut values = [f(simplex[0])?, f(simplex[1])?, f(simplex[2])?];
    for _ in 0..2000 {
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
        simplex = [simplex[idx[0]], simplex[idx[1]], simplex[idx[2]]];
        values = [values[idx[0]], values[idx[1]], values[idx[2]]];
        let size = (1..3)
            .map(|i| (simplex[i][0] - simplex[0][0]).abs().max((simplex[i][1] - simplex[0][1]).abs()))
            .fold(0.0, f64::max);
        if size < 1e-9 && (values[2] - values[0]).abs() <= tol * values[0].abs().max(1.0) {
            return Ok((simplex[0], values[0]));
        }
        if size < 1e-13 {
            return Ok((simplex[0], values[0]));
        }
        let centroid = [
            0.5 * (simplex[0][0] + simplex[1][0]),
            0.5 * (simplex[0][1] + simplex[1][1]),
        ];
        let along = |t: f64| {
            [
                centroid[0] + t * (simplex[2][0] - centroid[0]),
                centroid[1] + t * (simplex[2][1] - centroid[1]),
            ]
        };
        let reflected = along(-1.0);
        let fr = f(reflected)?;
        if fr < values[0] {
            let expanded = along(-2.0);
            let fe = f(expanded)?;
            if fe < fr {
                simplex[2] = expanded;
                values[2] = fe;
            } else {
                simplex[2] = reflected;
                values[2] = fr;
            }
            continue;
        }
        if fr < values[1] {
            simplex[2] = reflected;
            values[2] = fr;
            continue;
        }
        let (contracted, fc) = if fr < values[2] {
            let p = along(-0.5);
            (p, f(p)?)
        } else {
            let p = along(0.5);
            (p, f(p)?)
        };
        if fc < values[2].min(fr) {
            simplex[2] = contracted;
            values[2] = fc;
            continue;
        }
        for i in 1..3 {
            simplex[i] = [
                simplex[0][0] + 0.5 * (simplex[i][0] - simplex[0][0]),
                simplex[0][1] + 0.5 * (simplex[i][1] - simplex[0][1]),
            ];
            values[i] = f(simplex[i])?;
        }
    }
    Err(Error::NoConvergence("Nelder-Mead iteration budget exhausted".into()))
}
