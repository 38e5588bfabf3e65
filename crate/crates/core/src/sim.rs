//! Monte Carlo simulation of the log-likelihood random walk.
//!
//! Replication `r` draws from a ChaCha stream seeded by `seed` with stream
//! number `r`, and partial sums are reduced in fixed chunk order, so results do
//! not depend on the number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sprt::{Boundaries, Hypothesis, TestProblem};

const CHUNK: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimConfig {
    pub replications: u64,
    pub seed: u64,
    pub max_steps: u64,
}

impl SimConfig {
    pub fn new(replications: u64, seed: u64) -> Self {
        Self {
            replications,
            seed,
            max_steps: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub estimate: f64,
    pub std_error: f64,
}

impl Estimate {
    fn proportion(hits: u64, n: u64) -> Self {
        let p = hits as f64 / n as f64;
        Self {
            estimate: p,
            std_error: (p * (1.0 - p) / n as f64).sqrt(),
        }
    }

    fn mean(sum: f64, sum_sq: f64, n: u64) -> Self {
        let nf = n as f64;
        let m = sum / nf;
        let var = if n > 1 {
            ((sum_sq - nf * m * m) / (nf - 1.0)).max(0.0)
        } else {
            0.0
        };
        Self {
            estimate: m,
            std_error: (var / nf).sqrt(),
        }
    }

    /// Distance to `value` in standard errors.
    pub fn z_score(&self, value: f64) -> f64 {
        if self.std_error == 0.0 {
            if self.estimate == value {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            (self.estimate - value).abs() / self.std_error
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PgfEstimate {
    pub z: f64,
    pub value: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub hypothesis: Hypothesis,
    /// Replications that exited before the step cap.
    pub completed: u64,
    /// Fraction exiting at or below `a` (H1 accepted).
    pub lower_exit: Estimate,
    /// Fraction exiting at or above `b` (H0 accepted).
    pub upper_exit: Estimate,
    /// Type I error, present under H0.
    pub alpha0_hat: Option<Estimate>,
    /// Type II error, present under H1.
    pub alpha1_hat: Option<Estimate>,
    pub mean_n: Estimate,
    pub pgf_at: Vec<PgfEstimate>,
    pub capped_count: u64,
}

#[derive(Debug, Clone, Default)]
struct Tally {
    lower: u64,
    upper: u64,
    capped: u64,
    sum_n: f64,
    sum_n2: f64,
    sum_zn: Vec<f64>,
    sum_zn2: Vec<f64>,
}

impl Tally {
    fn merge(mut self, other: Tally) -> Tally {
        self.lower += other.lower;
        self.upper += other.upper;
        self.capped += other.capped;
        self.sum_n += other.sum_n;
        self.sum_n2 += other.sum_n2;
        for (a, b) in self.sum_zn.iter_mut().zip(other.sum_zn) {
            *a += b;
        }
        for (a, b) in self.sum_zn2.iter_mut().zip(other.sum_zn2) {
            *a += b;
        }
        self
    }
}

fn stream(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

/// Simulates `config.replications` tests under `hypothesis`.
pub fn run(
    problem: &TestProblem,
    bounds: &Boundaries,
    hypothesis: Hypothesis,
    config: &SimConfig,
    z_points: &[f64],
) -> Result<SimResult> {
    if config.replications == 0 || config.max_steps == 0 {
        return Err(Error::InvalidParameter {
            name: "replications",
            value: config.replications as f64,
            reason: "replications and max_steps must be positive",
        });
    }
    if let Some(z) = z_points.iter().find(|z| !(**z > 0.0 && **z <= 1.0)) {
        return Err(Error::InvalidParameter {
            name: "z",
            value: *z,
            reason: "must lie in (0, 1]",
        });
    }
    if !(bounds.a < 0.0 && bounds.b > 0.0) {
        return Err(Error::InvalidParameter {
            name: "bounds",
            value: bounds.a,
            reason: "simulation needs a < 0 < b",
        });
    }
    let ph = problem.ph(hypothesis);
    let (theta, d) = (problem.theta(), problem.d());
    let chunks = config.replications.div_ceil(CHUNK);
    let zero = Tally {
        sum_zn: vec![0.0; z_points.len()],
        sum_zn2: vec![0.0; z_points.len()],
        ..Tally::default()
    };
    let partials: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut t = zero.clone();
            let end = ((c + 1) * CHUNK).min(config.replications);
            for rep in c * CHUNK..end {
                let mut rng = stream(config.seed, rep);
                let mut lambda = 0.0;
                let mut n = 0u64;
                let mut exited = None;
                while n < config.max_steps {
                    lambda += theta * ph.sample(&mut rng) - d;
                    n += 1;
                    if lambda <= bounds.a {
                        exited = Some(false);
                        break;
                    }
                    if lambda >= bounds.b {
                        exited = Some(true);
                        break;
                    }
                }
                match exited {
                    None => t.capped += 1,
                    Some(up) => {
                        if up {
                            t.upper += 1;
                        } else {
                            t.lower += 1;
                        }
                        let nf = n as f64;
                        t.sum_n += nf;
                        t.sum_n2 += nf * nf;
                        for (i, z) in z_points.iter().enumerate() {
                            let v = z.powf(nf);
                            t.sum_zn[i] += v;
                            t.sum_zn2[i] += v * v;
                        }
                    }
                }
            }
            t
        })
        .collect();
    let total = partials.into_iter().fold(zero, Tally::merge);
    let completed = total.lower + total.upper;
    if completed == 0 {
        return Err(Error::AllCapped(config.replications));
    }
    let lower_exit = Estimate::proportion(total.lower, completed);
    let upper_exit = Estimate::proportion(total.upper, completed);
    let pgf_at = z_points
        .iter()
        .enumerate()
        .map(|(i, &z)| PgfEstimate {
            z,
            value: if z == 1.0 {
                Estimate {
                    estimate: 1.0,
                    std_error: 0.0,
                }
            } else {
                Estimate::mean(total.sum_zn[i], total.sum_zn2[i], completed)
            },
        })
        .collect();
    Ok(SimResult {
        hypothesis,
        completed,
        lower_exit,
        upper_exit,
        alpha0_hat: (hypothesis == Hypothesis::H0).then_some(lower_exit),
        alpha1_hat: (hypothesis == Hypothesis::H1).then_some(upper_exit),
        mean_n: Estimate::mean(total.sum_n, total.sum_n2, completed),
        pgf_at,
        capped_count: total.capped,
    })
}

/// Trajectory `(k, Lambda_k)` for `k = 0..=steps`, ignoring the boundaries.
pub fn sample_path(problem: &TestProblem, hypothesis: Hypothesis, steps: u64, seed: u64) -> Result<Vec<(u64, f64)>> {
    if steps == 0 {
        return Err(Error::InvalidParameter {
            name: "steps",
            value: 0.0,
            reason: "must be positive",
        });
    }
    let ph = problem.ph(hypothesis);
    let mut rng = stream(seed, 0);
    let mut lambda = 0.0;
    let mut out = Vec::with_capacity(steps as usize + 1);
    out.push((0, 0.0));
    for k in 1..=steps {
        lambda += problem.theta() * ph.sample(&mut rng) - problem.d();
        out.push((k, lambda));
    }
    Ok(out)
}
