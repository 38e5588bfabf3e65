//! Bracketed root finding: Brent's method with bisection safeguard.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct RootOptions {
    /// Stop once `|f(x)| <= ftol`.
    pub ftol: f64,
    /// Stop once the bracket is narrower than `xtol`.
    pub xtol: f64,
    pub max_iter: usize,
}

impl Default for RootOptions {
    fn default() -> Self {
        Self {
            ftol: 1e-12,
            xtol: 1e-14,
            max_iter: 200,
        }
    }
}

/// Root of `f` on `[a, b]` given `f(a)` and `f(b)` of opposite sign.
pub fn brent<F>(mut f: F, a: f64, b: f64, fa: f64, fb: f64, opts: RootOptions) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(Error::NoConvergence(format!(
            "root not bracketed on [{a}, {b}]: f = ({fa:e}, {fb:e})"
        )));
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;
    for _ in 0..opts.max_iter {
        if fb.abs() <= opts.ftol || (b - a).abs() <= opts.xtol {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            // inverse quadratic interpolation
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let outside = !((s > lo.min(b)) && (s < lo.max(b)));
        let slow = if bisected {
            (s - b).abs() >= (b - c).abs() / 2.0
        } else {
            (s - b).abs() >= (c - d).abs() / 2.0
        };
        let tiny = if bisected {
            (b - c).abs() < opts.xtol
        } else {
            (c - d).abs() < opts.xtol
        };
        if outside || slow || tiny || !s.is_finite() {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s)?;
        d = c;
        c = b;
        fc = fb;
        if fa.signum() != fs.signum() {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    if fb.abs() <= opts.ftol * 10.0 {
        return Ok(b);
    }
    Err(Error::NoConvergence(format!(
        "Brent iteration budget {} exhausted, residual {fb:e}",
        opts.max_iter
    )))
}
