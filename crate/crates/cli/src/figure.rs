use rayon::prelude::*;
use sprt_exact::solver::{bayes_optimal, optimality_region, posterior_boundaries, solve_boundaries, DEFAULT_TOL};
use sprt_exact::sprt::{b_bounds, expected_n, wald_bounds};
use sprt_exact::{Error, ErrorPair, Hypothesis, PenaltySpec, TestProblem};

use crate::output::{Cell, Table};

/// Evenly spaced values `lo..=hi`, written `lo:hi:count`.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Grid {
    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.count - 1) as f64;
        (0..self.count)
            .map(|i| if i + 1 == self.count { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }
}

pub fn parse_grid(s: &str) -> Result<Grid, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, count] = parts[..] else {
        return Err("expected lo:hi:count".into());
    };
    let num = |t: &str| t.trim().parse::<f64>().map_err(|e| format!("{t:?}: {e}"));
    let (lo, hi) = (num(lo)?, num(hi)?);
    let count = count.trim().parse::<usize>().map_err(|e| format!("{count:?}: {e}"))?;
    if !(lo.is_finite() && hi.is_finite()) || hi < lo {
        return Err("need finite lo <= hi".into());
    }
    if count == 0 || (count == 1 && lo != hi) {
        return Err("count must be positive, and 1 only when lo = hi".into());
    }
    Ok(Grid { lo, hi, count })
}

/// Runs `f` on every grid node in parallel, keeping rows in grid order and
/// reporting the first failing node.
fn sweep<F>(rhos: &[f64], f: F) -> Result<Vec<Vec<Cell>>, Error>
where
    F: Fn(f64) -> Result<Vec<Cell>, Error> + Sync,
{
    let rows: Vec<_> = rhos.par_iter().map(|&rho| f(rho)).collect();
    rows.into_iter()
        .enumerate()
        .map(|(index, row)| {
            row.map_err(|e| Error::GridNode {
                index,
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn boundaries(grid: &Grid, phases: usize, target: &ErrorPair) -> Result<Table, Error> {
    let mut table = Table::new(&["rho", "a", "b", "wald_a", "wald_b", "b_low", "b_high"]);
    let (wa, wb) = wald_bounds(target)?;
    for row in sweep(&grid.values(), |rho| {
        let problem = TestProblem::erlang_rho(phases, rho)?;
        let bounds = solve_boundaries(&problem, target, DEFAULT_TOL)?;
        let (lo, hi) = b_bounds(&problem, target)?;
        Ok(vec![rho, bounds.a, bounds.b, wa, wb, lo, hi].into_iter().map(Cell::from).collect())
    })? {
        table.push(row);
    }
    Ok(table)
}

pub fn expected_n_panel(grid: &Grid, phases: usize, target: &ErrorPair) -> Result<Table, Error> {
    let mut table = Table::new(&["rho", "E0N", "E1N", "max_EN"]);
    wald_bounds(target)?;
    for row in sweep(&grid.values(), |rho| {
        let problem = TestProblem::erlang_rho(phases, rho)?;
        let bounds = solve_boundaries(&problem, target, DEFAULT_TOL)?;
        let n0 = expected_n(&problem, &bounds, Hypothesis::H0)?;
        let n1 = expected_n(&problem, &bounds, Hypothesis::H1)?;
        Ok(vec![rho, n0, n1, n0.max(n1)].into_iter().map(Cell::from).collect())
    })? {
        table.push(row);
    }
    Ok(table)
}

pub const REGION_RHOS: [f64; 3] = [1.0 / 6.0, 0.5, 5.0 / 6.0];

pub fn region(phases: usize, grid_size: usize) -> Result<Table, Error> {
    let mut table = Table::new(&["rho", "branch", "index", "alpha0", "alpha1"]);
    let regions: Vec<_> = REGION_RHOS
        .par_iter()
        .map(|&rho| optimality_region(&TestProblem::erlang_rho(phases, rho)?, grid_size))
        .collect();
    for (index, (rho, region)) in REGION_RHOS.iter().zip(regions).enumerate() {
        let region = region.map_err(|e| Error::GridNode {
            index,
            source: Box::new(e),
        })?;
        let branches = [("lower", &region.lower_curve), ("upper", &region.upper_curve)];
        for (name, curve) in branches {
            for (k, p) in curve.iter().enumerate() {
                table.push(vec![
                    Cell::Num(*rho),
                    Cell::Text(name.into()),
                    Cell::Int(k as u64),
                    Cell::Num(p.alpha0),
                    Cell::Num(p.alpha1),
                ]);
            }
        }
    }
    Ok(table)
}

pub struct BayesCosts {
    pub c: f64,
    pub c0: f64,
    pub c1: f64,
}

/// Likelihood (`posterior = false`) or posterior boundaries per prior, plus the uniqueness flag.
pub fn bayes(grid: &Grid, phases: usize, priors: &[f64], costs: &BayesCosts, posterior: bool) -> Result<Table, Error> {
    let (lo, hi) = if posterior { ("a_star", "b_star") } else { ("a", "b") };
    let mut headers = vec!["rho".to_string()];
    for p in priors {
        headers.extend([format!("{lo}_pi{p}"), format!("{hi}_pi{p}"), format!("unique_pi{p}")]);
    }
    let specs = priors
        .iter()
        .map(|&p| PenaltySpec::new(p, costs.c, costs.c0, costs.c1))
        .collect::<Result<Vec<_>, _>>()?;
    let rows = sweep(&grid.values(), |rho| {
        let problem = TestProblem::erlang_rho(phases, rho)?;
        let mut row = vec![Cell::Num(rho)];
        for spec in &specs {
            let out = bayes_optimal(&problem, spec, 1e-8)?;
            let (x, y) = if posterior {
                // priors of 0 or 1 have no posterior map
                match posterior_boundaries(&out.bounds, spec.prior) {
                    Ok(post) => (post.a_star, post.b_star),
                    Err(_) => (f64::NAN, f64::NAN),
                }
            } else {
                (out.bounds.a, out.bounds.b)
            };
            row.extend([Cell::Num(x), Cell::Num(y), Cell::Int(out.is_unique() as u64)]);
        }
        Ok(row)
    })?;
    Ok(Table { headers, rows })
}
