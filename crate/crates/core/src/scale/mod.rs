//! Matrix scale functions of the Markov additive process with slope `theta`,
//! deterministic downward jumps `d` at phase-type renewal epochs, and killing
//! with survival probability `z` at each jump.
//!
//! `W` is characterised by `int_0^inf e^{-sx} W(x) dx = F(s)^{-1}` with
//! `F(s) = T + theta s I + z t nu e^{-ds}`.

mod erlang;
mod inversion;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};
use rug::Float;

use crate::error::{check_param, Error, Result};
use crate::mp::{dot, vec_from_f64};
use crate::phasetype::PhaseTypeDist;

pub use erlang::{MAX_PRECISION, MAX_TERMS};
pub(crate) use erlang::ErlangSeries;

/// Default relative accuracy of the inversion path.
pub const DEFAULT_INVERSION_TOL: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct MapModel {
    pub ph: PhaseTypeDist,
    pub theta: f64,
    pub d: f64,
    pub z: f64,
}

impl MapModel {
    pub fn new(ph: PhaseTypeDist, theta: f64, d: f64, z: f64) -> Result<Self> {
        check_param("theta", theta, theta > 0.0, "slope must be positive")?;
        check_param("d", d, d > 0.0, "jump size must be positive")?;
        check_param("z", z, z > 0.0 && z <= 1.0, "survival probability must lie in (0, 1]")?;
        Ok(Self { ph, theta, d, z })
    }

    /// Same process with a different survival probability.
    pub fn killed(&self, z: f64) -> Result<Self> {
        Self::new(self.ph.clone(), self.theta, self.d, z)
    }

    /// `z t nu`.
    pub fn jump_matrix(&self) -> DMatrix<f64> {
        self.ph.exit_rates() * self.ph.initial().transpose() * self.z
    }

    /// `T + theta s I + z t nu e^{-ds}`.
    pub fn f_matrix(&self, s: f64) -> DMatrix<f64> {
        let n = self.ph.phases();
        self.ph.subgenerator() + DMatrix::identity(n, n) * (self.theta * s) + self.jump_matrix() * (-self.d * s).exp()
    }

    fn erlang_series(&self) -> Option<ErlangSeries> {
        self.ph
            .erlang_shape()
            .map(|e| ErlangSeries::new(e.n, e.rate, self.theta, self.d, self.z))
    }
}

/// `F(s)` for `model`.
pub fn f_matrix(model: &MapModel, s: f64) -> DMatrix<f64> {
    model.f_matrix(s)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ScaleMethod {
    /// Closed-form series, Erlang inter-arrival laws only.
    ErlangClosedForm,
    TransformInversion { rel_tol: f64 },
}

/// Evaluator for `W(x)` and the functionals built from it.
#[derive(Debug, Clone)]
pub struct ScaleMatrix {
    model: MapModel,
    method: ScaleMethod,
    abscissa: OnceLock<f64>,
}

impl ScaleMatrix {
    /// Picks the closed form when the law is Erlang and inversion otherwise.
    pub fn new(model: MapModel) -> Self {
        let method = if model.ph.erlang_shape().is_some() {
            ScaleMethod::ErlangClosedForm
        } else {
            ScaleMethod::TransformInversion {
                rel_tol: DEFAULT_INVERSION_TOL,
            }
        };
        Self::new_unchecked(model, method)
    }

    pub fn with_method(model: MapModel, method: ScaleMethod) -> Result<Self> {
        match method {
            ScaleMethod::ErlangClosedForm if model.ph.erlang_shape().is_none() => Err(Error::InvalidParameter {
                name: "method",
                value: f64::NAN,
                reason: "closed form needs an Erlang law",
            }),
            ScaleMethod::TransformInversion { rel_tol } => {
                check_param("rel_tol", rel_tol, rel_tol > 0.0 && rel_tol < 1.0, "must lie in (0, 1)")?;
                Ok(Self::new_unchecked(model, method))
            }
            _ => Ok(Self::new_unchecked(model, method)),
        }
    }

    fn new_unchecked(model: MapModel, method: ScaleMethod) -> Self {
        Self {
            model,
            method,
            abscissa: OnceLock::new(),
        }
    }

    fn sigma_max(&self) -> f64 {
        *self.abscissa.get_or_init(|| inversion::abscissa(&self.model))
    }

    pub fn model(&self) -> &MapModel {
        &self.model
    }

    pub fn method(&self) -> ScaleMethod {
        self.method
    }

    fn series(&self) -> Option<ErlangSeries> {
        match self.method {
            ScaleMethod::ErlangClosedForm => self.model.erlang_series(),
            ScaleMethod::TransformInversion { .. } => None,
        }
    }

    fn rel_tol(&self) -> f64 {
        match self.method {
            ScaleMethod::TransformInversion { rel_tol } => rel_tol,
            ScaleMethod::ErlangClosedForm => DEFAULT_INVERSION_TOL,
        }
    }

    /// `W(x)`.
    pub fn eval(&self, x: f64) -> Result<DMatrix<f64>> {
        check_x(x)?;
        match self.series() {
            Some(s) => {
                let prec = s.precision_for(x, 0.0)?;
                Ok(s.w(x, prec)?.to_f64())
            }
            None => inversion::invert(&self.model, x, self.rel_tol(), self.sigma_max()),
        }
    }

    /// `int_0^x W(y) dy`.
    pub fn integral(&self, x: f64) -> Result<DMatrix<f64>> {
        check_x(x)?;
        match self.series() {
            Some(s) => {
                let prec = s.precision_for(x, 0.0)?;
                Ok(s.integral(x, 0.0, prec)?.to_f64())
            }
            None => inversion::integral_mat(&self.model, x, self.rel_tol(), self.sigma_max()),
        }
    }

    /// `Z(x) = I - int_0^x W(y) dy F(0)`.
    pub fn z_matrix(&self, x: f64) -> Result<DMatrix<f64>> {
        let n = self.model.ph.phases();
        Ok(DMatrix::identity(n, n) - self.integral(x)? * self.model.f_matrix(0.0))
    }

    /// Row vector `nu W(x1) W(x2)^{-1}`.
    pub fn exit_row(&self, nu: &DVector<f64>, x1: f64, x2: f64) -> Result<DVector<f64>> {
        check_x(x1)?;
        check_x(x2)?;
        match self.series() {
            Some(s) => {
                let prec = s.precision_for(x1.max(x2), 0.0)?;
                let w1 = s.w(x1, prec)?;
                let w2 = s.w(x2, prec)?;
                let row = w1.vec_mul(&vec_from_f64(nu, prec));
                Ok(crate::mp::vec_to_f64(&w2.solve_left(&row)?))
            }
            None => {
                let w1 = self.eval(x1)?;
                let w2 = self.eval(x2)?;
                solve_left_f64(&w2, &(w1.transpose() * nu))
            }
        }
    }

    /// `-nu J(x1) t + e^{beta (x1 - x2)} nu W(x1) W(x2)^{-1} (J(x2) t + w)` with
    /// `J(x) = int_0^x e^{beta y} W(y) dy`. Expected sample sizes and the
    /// generating function of the sample count are all of this form.
    pub fn count_kernel(
        &self,
        nu: &DVector<f64>,
        t: &DVector<f64>,
        w: &DVector<f64>,
        beta: f64,
        x1: f64,
        x2: f64,
    ) -> Result<f64> {
        check_x(x1)?;
        check_x(x2)?;
        match self.series() {
            Some(s) => {
                let prec = s.precision_for(x1.max(x2), beta)?;
                let w1 = s.w(x1, prec)?;
                let w2 = s.w(x2, prec)?;
                let j1 = s.integral(x1, beta, prec)?;
                let j2 = s.integral(x2, beta, prec)?;
                let nu_mp = vec_from_f64(nu, prec);
                let t_mp = vec_from_f64(t, prec);
                let y = w2.solve_left(&w1.vec_mul(&nu_mp))?;
                let mut inner = j2.mul_vec(&t_mp);
                for (v, wi) in inner.iter_mut().zip(w.iter()) {
                    *v += *wi;
                }
                let first = dot(prec, nu_mp.iter().zip(j1.mul_vec(&t_mp).iter()));
                let mut second = dot(prec, y.iter().zip(inner.iter()));
                if beta != 0.0 {
                    second *= Float::with_val(prec, beta * (x1 - x2)).exp();
                }
                Ok((second - first).to_f64())
            }
            None => {
                let rel_tol = self.rel_tol();
                let j1 = inversion::integral_vec(&self.model, x1, beta, t, rel_tol, self.sigma_max())?;
                let j2 = inversion::integral_vec(&self.model, x2, beta, t, rel_tol, self.sigma_max())?;
                let y = self.exit_row(nu, x1, x2)?;
                Ok(-nu.dot(&j1) + (beta * (x1 - x2)).exp() * y.dot(&(j2 + w)))
            }
        }
    }

    /// `nu (Z(x1) - Y Z(x2) + z Y) 1` with `Y = W(x1) W(x2)^{-1}`: the
    /// generating function of the count at the model's `z`.
    pub fn pgf_kernel(&self, nu: &DVector<f64>, x1: f64, x2: f64) -> Result<f64> {
        let z = self.model.z;
        if z == 1.0 {
            return Ok(1.0);
        }
        // Z(x) 1 = 1 + (1 - z) J(x) t, so the expression collapses onto the count kernel
        let n = nu.len();
        let ones = DVector::from_element(n, 1.0);
        let k = self.count_kernel(nu, self.model.ph.exit_rates(), &ones, 0.0, x1, x2)?;
        Ok(1.0 - (1.0 - z) * k)
    }
}

fn check_x(x: f64) -> Result<()> {
    check_param("x", x, x >= 0.0, "scale function argument must be nonnegative")
}

/// Row `y` with `y W = v^T`, rejecting solves whose condition number eats the f64 budget.
pub(crate) fn solve_left_f64(w: &DMatrix<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    let wt = w.transpose();
    let lu = wt.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::IllConditionedSolve("scale matrix is singular".into()))?;
    let cond = one_norm(&wt) * one_norm(&inv);
    if !cond.is_finite() || cond * f64::EPSILON > 1e-6 {
        return Err(Error::IllConditionedSolve(format!("condition number {cond:e}")));
    }
    Ok(inv * v)
}

fn one_norm(m: &DMatrix<f64>) -> f64 {
    (0..m.ncols())
        .map(|j| m.column(j).iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn erlang_model(lambda: f64, d: f64, n: usize, z: f64) -> Result<ErlangSeries> {
    check_param("lambda", lambda, lambda > 0.0, "rate must be positive")?;
    check_param("d", d, d > 0.0, "jump size must be positive")?;
    check_param("z", z, z > 0.0 && z <= 1.0, "survival probability must lie in (0, 1]")?;
    if n == 0 {
        return Err(Error::InvalidParameter {
            name: "n",
            value: 0.0,
            reason: "phase count must be positive",
        });
    }
    Ok(ErlangSeries::new(n, lambda, 1.0, d, z))
}

/// Closed-form `W^z(x)` for Erlang(`n`, `lambda`) inter-arrivals and unit slope.
pub fn erlang_w(lambda: f64, d: f64, n: usize, z: f64, x: f64) -> Result<DMatrix<f64>> {
    check_x(x)?;
    let s = erlang_model(lambda, d, n, z)?;
    let prec = s.precision_for(x, 0.0)?;
    Ok(s.w(x, prec)?.to_f64())
}

/// Closed-form `int_0^x W^z(y) dy` for Erlang inter-arrivals and unit slope.
pub fn erlang_w_integral(lambda: f64, d: f64, n: usize, z: f64, x: f64) -> Result<DMatrix<f64>> {
    check_x(x)?;
    let s = erlang_model(lambda, d, n, z)?;
    let prec = s.precision_for(x, 0.0)?;
    Ok(s.integral(x, 0.0, prec)?.to_f64())
}

/// `Z^z(x)` for `model`, by the closed form when available.
pub fn z_matrix(model: &MapModel, x: f64) -> Result<DMatrix<f64>> {
    ScaleMatrix::new(model.clone()).z_matrix(x)
}

/// `W^z(x)` by numerical transform inversion, for any phase-type law.
pub fn general_w(model: &MapModel, x: f64, rel_tol: f64) -> Result<DMatrix<f64>> {
    check_x(x)?;
    check_param("rel_tol", rel_tol, rel_tol > 0.0 && rel_tol < 1.0, "must lie in (0, 1)")?;
    inversion::invert(model, x, rel_tol, inversion::abscissa(model))
}

/// `e^x Delta^{-1} W0(x) Delta`, the scale function of the tilted process.
pub fn tilted_w(w0_eval: &ScaleMatrix, delta: &DVector<f64>, x: f64) -> Result<DMatrix<f64>> {
    let w0 = w0_eval.eval(x)?;
    if delta.len() != w0.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "delta has length {} for {} phases",
            delta.len(),
            w0.nrows()
        )));
    }
    let ex = x.exp();
    Ok(DMatrix::from_fn(w0.nrows(), w0.ncols(), |i, j| ex * w0[(i, j)] * delta[j] / delta[i]))
}
