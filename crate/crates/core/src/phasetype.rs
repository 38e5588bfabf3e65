//! Phase-type distributions: validation, density, transform, exponential tilting
//! and sampling.
//!
//! A phase-type law is the absorption time of a transient Markov chain with
//! initial row vector `nu` and subgenerator `T`; the exit vector is `t = -T 1`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_param, Error, Result};

/// Absolute tolerance for stochasticity and row-sum checks.
pub const VALIDATION_TOL: f64 = 1e-12;

/// Shape and rate of a canonical Erlang representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErlangShape {
    pub n: usize,
    pub rate: f64,
}

#[derive(Debug, Clone)]
pub struct PhaseTypeDist {
    nu: DVector<f64>,
    sub: DMatrix<f64>,
    exit: DVector<f64>,
    erlang: Option<ErlangShape>,
    // per-phase cumulative jump probabilities: other phases in index order, then absorption
    jump_cdf: Vec<Vec<f64>>,
}

impl PhaseTypeDist {
    /// Validates `(nu, T)` and builds the distribution.
    pub fn new(nu: DVector<f64>, sub: DMatrix<f64>) -> Result<Self> {
        let n = nu.len();
        if n == 0 {
            return Err(Error::DimensionMismatch("phase count must be positive".into()));
        }
        if sub.nrows() != n || sub.ncols() != n {
            return Err(Error::DimensionMismatch(format!(
                "T is {}x{} but nu has length {n}",
                sub.nrows(),
                sub.ncols()
            )));
        }
        if nu.iter().any(|v| !v.is_finite()) || sub.iter().any(|v| !v.is_finite()) {
            return Err(Error::DimensionMismatch("non-finite entry".into()));
        }
        if let Some(v) = nu.iter().find(|v| **v < 0.0) {
            return Err(Error::NonStochasticInitial(format!("negative entry {v}")));
        }
        let total: f64 = nu.iter().sum();
        if (total - 1.0).abs() > VALIDATION_TOL {
            return Err(Error::NonStochasticInitial(format!("entries sum to {total}")));
        }
        for i in 0..n {
            if sub[(i, i)] >= 0.0 {
                return Err(Error::NotSubgenerator(format!(
                    "diagonal entry T[{i}][{i}] = {} is not negative",
                    sub[(i, i)]
                )));
            }
            for j in 0..n {
                if i != j && sub[(i, j)] < 0.0 {
                    return Err(Error::NotSubgenerator(format!(
                        "off-diagonal entry T[{i}][{j}] = {} is negative",
                        sub[(i, j)]
                    )));
                }
            }
            let row: f64 = sub.row(i).iter().sum();
            if row > VALIDATION_TOL {
                return Err(Error::NotSubgenerator(format!("row {i} sums to {row} > 0")));
            }
        }
        let exit = -(&sub * DVector::from_element(n, 1.0));
        let exit = exit.map(|v| if v.abs() <= VALIDATION_TOL { 0.0 } else { v });
        if exit.iter().all(|v| *v <= 0.0) {
            return Err(Error::SingularGenerator("exit vector is identically zero".into()));
        }
        check_nonsingular(&sub)?;

        let erlang = detect_erlang(&nu, &sub);
        let jump_cdf = (0..n)
            .map(|i| {
                let rate = -sub[(i, i)];
                let mut acc = 0.0;
                let mut cdf = Vec::with_capacity(n);
                for j in (0..n).filter(|j| *j != i) {
                    acc += sub[(i, j)] / rate;
                    cdf.push(acc);
                }
                cdf
            })
            .collect();
        Ok(Self {
            nu,
            sub,
            exit,
            erlang,
            jump_cdf,
        })
    }

    /// Builds from plain rows, as read from a model document.
    pub fn from_rows(nu: &[f64], rows: &[Vec<f64>]) -> Result<Self> {
        let n = nu.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch(format!(
                "T must be {n}x{n} to match nu"
            )));
        }
        let sub = DMatrix::from_fn(n, n, |i, j| rows[i][j]);
        Self::new(DVector::from_column_slice(nu), sub)
    }

    /// Canonical Erlang(n, rate): `nu = e1`, `-rate` on the diagonal, `rate` above it.
    pub fn erlang(n: usize, rate: f64) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter {
                name: "n",
                value: 0.0,
                reason: "phase count must be at least 1",
            });
        }
        check_param("lambda", rate, rate > 0.0, "rate must be positive")?;
        let mut nu = DVector::zeros(n);
        nu[0] = 1.0;
        let sub = DMatrix::from_fn(n, n, |i, j| {
            if i == j {
                -rate
            } else if j == i + 1 {
                rate
            } else {
                0.0
            }
        });
        Self::new(nu, sub)
    }

    /// Mixture of exponentials with the given weights and rates.
    pub fn hyperexponential(weights: &[f64], rates: &[f64]) -> Result<Self> {
        if weights.len() != rates.len() {
            return Err(Error::DimensionMismatch("weights and rates differ in length".into()));
        }
        let n = rates.len();
        let sub = DMatrix::from_fn(n, n, |i, j| if i == j { -rates[i] } else { 0.0 });
        Self::new(DVector::from_column_slice(weights), sub)
    }

    pub fn phases(&self) -> usize {
        self.nu.len()
    }

    pub fn initial(&self) -> &DVector<f64> {
        &self.nu
    }

    pub fn subgenerator(&self) -> &DMatrix<f64> {
        &self.sub
    }

    pub fn exit_rates(&self) -> &DVector<f64> {
        &self.exit
    }

    /// `Some` when the representation is the canonical Erlang form.
    pub fn erlang_shape(&self) -> Option<ErlangShape> {
        self.erlang
    }

    /// Mean `nu (-T)^{-1} 1`.
    pub fn mean(&self) -> f64 {
        if let Some(e) = self.erlang {
            return e.n as f64 / e.rate;
        }
        let n = self.phases();
        let neg = -self.sub.clone();
        let m = neg
            .lu()
            .solve(&DVector::from_element(n, 1.0))
            .expect("validated subgenerator is nonsingular");
        self.nu.dot(&m)
    }

    /// Density `nu e^{Tx} t` at `x >= 0`.
    pub fn density(&self, x: f64) -> f64 {
        debug_assert!(x >= 0.0);
        if let Some(ErlangShape { n, rate }) = self.erlang {
            if x == 0.0 {
                return if n == 1 { rate } else { 0.0 };
            }
            // log-space keeps large shapes finite
            let log = n as f64 * rate.ln() + (n - 1) as f64 * x.ln() - rate * x - ln_factorial(n - 1);
            return log.exp();
        }
        let e = (&self.sub * x).exp();
        (self.nu.transpose() * e * &self.exit)[(0, 0)].max(0.0)
    }

    /// Laplace-Stieltjes transform `nu (theta I - T)^{-1} t`.
    pub fn lst(&self, theta: f64) -> f64 {
        debug_assert!(theta >= 0.0);
        if let Some(ErlangShape { n, rate }) = self.erlang {
            return (rate / (rate + theta)).powi(n as i32);
        }
        self.nu.dot(&self.resolvent_exit(theta))
    }

    /// `(theta I - T)^{-1} t`; for `theta > 0` every entry lies in `(0, 1)`.
    pub fn resolvent_exit(&self, theta: f64) -> DVector<f64> {
        let n = self.phases();
        let m = DMatrix::identity(n, n) * theta - &self.sub;
        m.lu()
            .solve(&self.exit)
            .expect("theta I - T is nonsingular for a subgenerator and theta >= 0")
    }

    /// Exponential tilt `f1(x) = e^{-theta x} f0(x) / G0(theta)`, again phase-type.
    pub fn tilt(&self, theta: f64) -> Result<TiltResult> {
        check_param("theta", theta, theta > 0.0, "tilt parameter must be positive")?;
        let n = self.phases();
        let delta = self.resolvent_exit(theta);
        if delta.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::SingularGenerator(format!(
                "(theta I - T)^{{-1}} t has non-positive or non-finite entries at theta = {theta}"
            )));
        }
        let g0 = self.nu.dot(&delta);
        let d = -g0.ln();
        let sub1 = DMatrix::from_fn(n, n, |i, j| {
            let v = self.sub[(i, j)] * delta[j] / delta[i];
            if i == j {
                v - theta
            } else {
                v
            }
        });
        let nu1 = self.nu.component_mul(&delta) / g0;
        let tilted = match self.erlang {
            Some(ErlangShape { n, rate }) => PhaseTypeDist::erlang(n, rate + theta)?,
            None => {
                // renormalize away rounding in nu1 before validation
                let s: f64 = nu1.iter().sum();
                PhaseTypeDist::new(nu1 / s, sub1)?
            }
        };
        Ok(TiltResult {
            tilted,
            delta,
            g0_theta: g0,
            d,
            theta,
        })
    }

    /// One draw, reproducible given the state of `rng`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if let Some(ErlangShape { n, rate }) = self.erlang {
            let mut acc = 0.0;
            for _ in 0..n {
                acc += std_exp(rng);
            }
            return acc / rate;
        }
        let n = self.phases();
        let mut phase = pick(self.nu.as_slice(), rng).unwrap_or(n - 1);
        let mut total = 0.0;
        loop {
            let rate = -self.sub[(phase, phase)];
            total += std_exp(rng) / rate;
            let u: f64 = rng.random();
            let cdf = &self.jump_cdf[phase];
            match cdf.iter().position(|c| u < *c) {
                Some(k) => phase = if k < phase { k } else { k + 1 },
                None => return total,
            }
        }
    }

    /// Serializable description in the model document schema.
    pub fn to_doc(&self) -> ModelDoc {
        match self.erlang {
            Some(ErlangShape { n, rate }) => ModelDoc::Erlang {
                erlang: ErlangDoc { n, lambda: rate },
            },
            None => ModelDoc::Matrix {
                nu: self.nu.iter().copied().collect(),
                t: (0..self.phases())
                    .map(|i| self.sub.row(i).iter().copied().collect())
                    .collect(),
            },
        }
    }
}

/// Result of exponentially tilting a phase-type law.
#[derive(Debug, Clone)]
pub struct TiltResult {
    pub tilted: PhaseTypeDist,
    /// Diagonal of the similarity matrix, `(theta I - T0)^{-1} t0`.
    pub delta: DVector<f64>,
    pub g0_theta: f64,
    /// Jump size `-log G0(theta)`.
    pub d: f64,
    pub theta: f64,
}

/// `{ "erlang": { "n": 2, "lambda": 1.0 } }` or `{ "nu": [..], "T": [[..], ..] }`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelDoc {
    Erlang {
        erlang: ErlangDoc,
    },
    Matrix {
        nu: Vec<f64>,
        #[serde(rename = "T")]
        t: Vec<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErlangDoc {
    pub n: usize,
    pub lambda: f64,
}

impl ModelDoc {
    pub fn build(&self) -> Result<PhaseTypeDist> {
        match self {
            ModelDoc::Erlang { erlang } => PhaseTypeDist::erlang(erlang.n, erlang.lambda),
            ModelDoc::Matrix { nu, t } => PhaseTypeDist::from_rows(nu, t),
        }
    }
}

fn check_nonsingular(sub: &DMatrix<f64>) -> Result<()> {
    let inv = sub
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::SingularGenerator("T is not invertible".into()))?;
    let cond = sub.abs().column_sum().max() * inv.abs().column_sum().max();
    if !cond.is_finite() || cond > 1e14 {
        return Err(Error::SingularGenerator(format!(
            "T is numerically singular (condition ~ {cond:e})"
        )));
    }
    Ok(())
}

fn detect_erlang(nu: &DVector<f64>, sub: &DMatrix<f64>) -> Option<ErlangShape> {
    let n = nu.len();
    let rate = -sub[(0, 0)];
    let tol = VALIDATION_TOL * rate;
    if (nu[0] - 1.0).abs() > VALIDATION_TOL || nu.iter().skip(1).any(|v| *v > VALIDATION_TOL) {
        return None;
    }
    for i in 0..n {
        for j in 0..n {
            let want = if i == j {
                -rate
            } else if j == i + 1 {
                rate
            } else {
                0.0
            };
            if (sub[(i, j)] - want).abs() > tol {
                return None;
            }
        }
    }
    Some(ErlangShape { n, rate })
}

fn std_exp<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u: f64 = rng.random();
    -(1.0 - u).ln()
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    weights.iter().position(|w| {
        acc += w;
        u < acc
    })
}

pub(crate) fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}
