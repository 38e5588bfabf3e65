//! Numerical inversion of `s -> F(s)^{-1}` for arbitrary phase-type laws.
//!
//! Write `F(s) = (theta s + c) I + K(s)` with `K(s) = T - cI + C e^{-ds}` and
//! `C = z t nu`. Expanding in `K / (theta s + c)` gives `P` terms whose inverse
//! transforms are exact (shifted powers times exponentials); these carry the
//! kinks of `W` at multiples of `d`. The remainder decays like `|s|^{-P-1}` and
//! is inverted with a damped Fourier series on a long period.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use super::MapModel;
use crate::error::{Error, Result};

/// Number of terms subtracted exactly.
const ORDERS: usize = 8;
/// Hard budget on Fourier terms.
const MAX_TERMS: usize = 200_000;

/// Bound on the real part of every zero of `det F(s)` with `Re s >= 0`.
///
/// There `|e^{-ds}| <= 1`, so a zero needs `-theta s` to be an eigenvalue of
/// `T + C w` with `|w| <= 1`; Gershgorin discs (rows or columns) bound those.
fn gershgorin(model: &MapModel) -> f64 {
    let t = model.ph.subgenerator();
    let c = model.jump_matrix();
    let n = t.nrows();
    let disc = |transpose: bool| {
        (0..n)
            .map(|i| {
                let mut r = -t[(i, i)] + c[(i, i)].abs();
                for j in (0..n).filter(|j| *j != i) {
                    let (a, b) = if transpose { (j, i) } else { (i, j) };
                    r += t[(a, b)].abs() + c[(a, b)].abs();
                }
                r
            })
            .fold(f64::NEG_INFINITY, f64::max)
    };
    disc(false).min(disc(true)).max(0.0) / model.theta
}

/// Upper estimate of the largest real part among zeros of `det F(s)`, clamped at 0.
///
/// Zeros right of a vertical line are counted with the argument principle on a
/// box reaching past the Gershgorin bound, and the line is bisected. A count
/// that cannot be resolved is treated as occupied, which only moves the
/// estimate right.
pub(crate) fn abscissa(model: &MapModel) -> f64 {
    let outer = gershgorin(model);
    let (t_norm, c_norm) = norms(model);
    // |theta s| <= ||T + C w|| at any zero
    let height = (t_norm + c_norm) / model.theta + 1.0;
    let right = outer + 1.0;
    let occupied = |sigma: f64| zeros_right_of(model, sigma, right, height).is_none_or(|k| k > 0);
    let mut lo = -0.25;
    if !occupied(lo) {
        return 0.0;
    }
    let mut hi = outer;
    while hi - lo > 1e-3 * hi.max(1.0) {
        let mid = 0.5 * (lo + hi);
        if occupied(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.max(0.0)
}

fn det_f(model: &MapModel, s: Complex64) -> Complex64 {
    let n = model.ph.phases();
    let e = (-s * model.d).exp();
    let c = model.jump_matrix();
    let t = model.ph.subgenerator();
    let mut f = DMatrix::from_fn(n, n, |i, j| Complex64::from(t[(i, j)]) + Complex64::from(c[(i, j)]) * e);
    for i in 0..n {
        f[(i, i)] += s * model.theta;
    }
    f.determinant()
}

/// Number of zeros of `det F` in `(left, right) x (-height, height)`.
fn zeros_right_of(model: &MapModel, left: f64, right: f64, height: f64) -> Option<i64> {
    let corners = [
        Complex64::new(left, -height),
        Complex64::new(right, -height),
        Complex64::new(right, height),
        Complex64::new(left, height),
    ];
    let g = |s: Complex64| det_f(model, s);
    let mut turn = 0.0;
    for k in 0..4 {
        let (p, q) = (corners[k], corners[(k + 1) % 4]);
        let pieces = 64;
        let mut prev = p;
        let mut g_prev = g(p);
        for i in 1..=pieces {
            let next = p + (q - p) * (i as f64 / pieces as f64);
            let g_next = g(next);
            turn += arg_change(&g, prev, g_prev, next, g_next, 0)?;
            prev = next;
            g_prev = g_next;
        }
    }
    let windings = turn / (2.0 * std::f64::consts::PI);
    let k = windings.round();
    ((windings - k).abs() < 0.1).then_some(k as i64)
}

fn arg_change<G>(g: &G, p: Complex64, gp: Complex64, q: Complex64, gq: Complex64, depth: u32) -> Option<f64>
where
    G: Fn(Complex64) -> Complex64,
{
    let ratio = gq / gp;
    if !ratio.re.is_finite() || !ratio.im.is_finite() || ratio.norm() == 0.0 {
        return None;
    }
    let step = ratio.arg();
    if step.abs() < 0.5 {
        return Some(step);
    }
    if depth >= 40 {
        return None;
    }
    let m = 0.5 * (p + q);
    let gm = g(m);
    Some(arg_change(g, p, gp, m, gm, depth + 1)? + arg_change(g, m, gm, q, gq, depth + 1)?)
}

fn norms(model: &MapModel) -> (f64, f64) {
    let t = model.ph.subgenerator();
    let n = t.nrows();
    let row_norm = |m: &DMatrix<f64>| {
        (0..n)
            .map(|i| m.row(i).iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    };
    let c = model.jump_matrix();
    (row_norm(t), row_norm(&c))
}

/// `W(x)` by inversion, aiming at `rel_tol` relative accuracy on entries of size at least one.
/// `sigma_max` bounds the real parts of the singularities of `F^{-1}`, see [`abscissa`].
pub(crate) fn invert(model: &MapModel, x: f64, rel_tol: f64, sigma_max: f64) -> Result<DMatrix<f64>> {
    let n = model.ph.phases();
    let theta = model.theta;
    if x == 0.0 {
        return Ok(DMatrix::identity(n, n) / theta);
    }
    let (t_norm, c_norm) = norms(model);
    let c = t_norm + c_norm;
    let a_mat = model.ph.subgenerator() - DMatrix::identity(n, n) * c;
    let c_mat = model.jump_matrix();

    let asym = asymptotic_part(&a_mat, &c_mat, theta, c, model.d, x);

    let delta = 2.0 / x;
    let sigma = sigma_max + delta;
    let period = x * (1e3 / rel_tol).ln() / 2.0;
    let omega = 2.0 * std::f64::consts::PI / period;
    let weight = (sigma * x).exp() / period;

    let remainder = |s: Complex64| -> Result<DMatrix<Complex64>> {
        let shift = Complex64::new(theta, 0.0) * s + c;
        let e = (-s * model.d).exp();
        let k_mat = a_mat.map(Complex64::from) + c_mat.map(|v| Complex64::from(v) * e);
        let mut f = k_mat.clone();
        for i in 0..n {
            f[(i, i)] += shift;
        }
        let f_inv = f
            .lu()
            .try_inverse()
            .ok_or(Error::SingularTransform { re: s.re, im: s.im })?;
        if f_inv.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::SingularTransform { re: s.re, im: s.im });
        }
        let u = k_mat * (-Complex64::from(1.0) / shift);
        let mut up = u.clone();
        for _ in 1..ORDERS {
            up = &up * &u;
        }
        Ok(up * f_inv)
    };

    let r0 = remainder(Complex64::new(sigma, 0.0))?;
    let mut sum = r0.map(|v| v.re);
    let mut abs_sum = sum.abs();
    let large_freq = 4.0 * c / theta;
    let mut quiet = 0;
    for k in 1..=MAX_TERMS {
        let wk = omega * k as f64;
        let rk = remainder(Complex64::new(sigma, wk))?;
        let phase = Complex64::new(0.0, wk * x).exp();
        let term = rk.map(|v| 2.0 * (v * phase).re);
        abs_sum += term.abs();
        sum += &term;

        let scale = (&asym + &sum * weight).amax().max(1.0);
        let tail = rk.iter().map(|v| v.norm()).fold(0.0, f64::max) * 2.0 * weight * k as f64 / ORDERS as f64;
        if wk > large_freq && tail < 0.1 * rel_tol * scale {
            quiet += 1;
            if quiet >= 8 {
                let roundoff = abs_sum.amax() * weight * f64::EPSILON * 16.0;
                if roundoff > rel_tol * scale {
                    return Err(Error::InversionDiverged(format!(
                        "roundoff {roundoff:e} exceeds target at x = {x}"
                    )));
                }
                return Ok(asym + sum * weight);
            }
        } else {
            quiet = 0;
        }
    }
    Err(Error::InversionDiverged(format!(
        "no convergence within {MAX_TERMS} terms at x = {x}"
    )))
}

/// Inverse transform of the first `ORDERS` terms of the expansion of `F(s)^{-1}`.
fn asymptotic_part(a: &DMatrix<f64>, c_mat: &DMatrix<f64>, theta: f64, c: f64, d: f64, x: f64) -> DMatrix<f64> {
    let n = a.nrows();
    // coefficients of e^{-j d s} in K(s)^k
    let mut coeffs: Vec<DMatrix<f64>> = vec![DMatrix::identity(n, n)];
    let mut out = DMatrix::zeros(n, n);
    let rate = c / theta;
    let mut fact = 1.0;
    for k in 0..ORDERS {
        if k > 0 {
            fact *= k as f64;
        }
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let pref = sign / theta.powi(k as i32 + 1) / fact;
        for (j, m) in coeffs.iter().enumerate() {
            let y = x - j as f64 * d;
            if y < 0.0 || (k > 0 && y == 0.0) {
                continue;
            }
            out += m * (pref * y.powi(k as i32) * (-rate * y).exp());
        }
        let mut next = vec![DMatrix::zeros(n, n); coeffs.len() + 1];
        for (j, m) in coeffs.iter().enumerate() {
            next[j] += a * m;
            next[j + 1] += c_mat * m;
        }
        coeffs = next;
    }
    out
}

/// `int_0^x e^{beta y} W(y) v dy` on the inversion path.
pub(crate) fn integral_vec(
    model: &MapModel,
    x: f64,
    beta: f64,
    v: &DVector<f64>,
    rel_tol: f64,
    sigma_max: f64,
) -> Result<DVector<f64>> {
    if x == 0.0 {
        return Ok(DVector::zeros(v.len()));
    }
    let breaks = jump_breaks(model.d, x);
    crate::quad::integrate(
        |y| Ok(invert(model, y, rel_tol, sigma_max)? * v * (beta * y).exp()),
        0.0,
        x,
        &breaks,
        1e-12,
        1e-9,
    )
}

/// `int_0^x W(y) dy` on the inversion path, entrywise.
pub(crate) fn integral_mat(model: &MapModel, x: f64, rel_tol: f64, sigma_max: f64) -> Result<DMatrix<f64>> {
    let n = model.ph.phases();
    if x == 0.0 {
        return Ok(DMatrix::zeros(n, n));
    }
    let breaks = jump_breaks(model.d, x);
    let flat = crate::quad::integrate(
        |y| {
            let w = invert(model, y, rel_tol, sigma_max)?;
            Ok(DVector::from_column_slice(w.as_slice()))
        },
        0.0,
        x,
        &breaks,
        1e-12,
        1e-9,
    )?;
    Ok(DMatrix::from_column_slice(n, n, flat.as_slice()))
}

fn jump_breaks(d: f64, x: f64) -> Vec<f64> {
    let k = (x / d).floor();
    if k > 1000.0 {
        return Vec::new();
    }
    (1..=k as usize).map(|j| j as f64 * d).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phasetype::PhaseTypeDist;

    fn model(ph: PhaseTypeDist, d: f64) -> MapModel {
        MapModel::new(ph, 1.0, d, 1.0).unwrap()
    }

    #[test]
    fn abscissa_finds_non_perron_root() {
        // det F = (s - 1)^2 - e^{-s}; rightmost root solves s - 1 = e^{-s/2}
        let m = model(PhaseTypeDist::erlang(2, 1.0).unwrap(), 1.0);
        let root = 1.4776;
        assert!((root - 1.0 - (-root / 2.0f64).exp()).abs() < 1e-3);
        let s = abscissa(&m);
        assert!(s >= root && s < root + 3e-3, "{s}");
        assert!(s < gershgorin(&m));
    }

    #[test]
    fn abscissa_at_origin_for_positive_drift() {
        let m = model(PhaseTypeDist::erlang(1, 1.0).unwrap(), 2f64.ln());
        assert!(abscissa(&m) < 2e-3);
    }

    #[test]
    fn counts_zeros_in_box() {
        let m = model(PhaseTypeDist::erlang(2, 1.0).unwrap(), 1.0);
        // roots at 0 and near 1.478 on the real axis
        assert_eq!(zeros_right_of(&m, -0.1, 3.0, 4.0), Some(2));
        assert_eq!(zeros_right_of(&m, 0.5, 3.0, 4.0), Some(1));
        assert_eq!(zeros_right_of(&m, 1.6, 3.0, 4.0), Some(0));
    }
}
