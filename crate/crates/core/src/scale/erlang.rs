//! Closed-form scale function for Erlang inter-arrival times.
//!
//! With `mu = lambda / theta` the entries are
//! `W(x)_ij = theta^{-1} sum_{k = 1{i>j}}^{floor(x/d)} z^k g(mu (x - d k), k n + j - i)`,
//! `g(y, m) = (-y)^m / m! e^y`. Under killing the corner entry of `F(s)`
//! carries `z`, so the geometric expansion of `1/det F` picks up `z^k` and the
//! `i > j` cofactor one more `z`, which lands on the same power `z^k` after
//! the index shift.
//!
//! The terms reach `e^{2 mu x}` in size while the sum is much smaller, so the
//! series is summed in MPFR at a precision derived from `mu x`.

use rug::ops::Pow;
use rug::Float;

use crate::error::{Error, Result};
use crate::mp::MpMat;

/// Hard cap on the number of jump terms.
pub const MAX_TERMS: usize = 100_000;
/// Hard cap on the working precision in bits.
pub const MAX_PRECISION: u32 = 1 << 18;

#[derive(Debug, Clone, Copy)]
pub(crate) struct ErlangSeries {
    pub n: usize,
    /// `lambda / theta`.
    pub mu: f64,
    pub theta: f64,
    pub d: f64,
    pub z: f64,
}

impl ErlangSeries {
    pub fn new(n: usize, lambda: f64, theta: f64, d: f64, z: f64) -> Self {
        Self {
            n,
            mu: lambda / theta,
            theta,
            d,
            z,
        }
    }

    /// `floor(x / d)`, checked against the term cap.
    pub fn term_count(&self, x: f64) -> Result<usize> {
        let k = (x / self.d).floor();
        if !k.is_finite() || k > MAX_TERMS as f64 {
            return Err(Error::SeriesOverflow(format!(
                "x/d = {:e} jump terms exceeds the cap of {MAX_TERMS}",
                x / self.d
            )));
        }
        Ok(k as usize)
    }

    /// Working precision for arguments up to `x_max` with exponential weight `beta`.
    pub fn precision_for(&self, x_max: f64, beta: f64) -> Result<u32> {
        let k = self.term_count(x_max)?;
        let growth = 5.0 * (self.mu + beta.max(0.0)) * x_max * std::f64::consts::LOG2_E;
        let bits = 128.0 + growth.ceil() + 2.0 * ((k + 2) as f64).log2().ceil();
        if !bits.is_finite() || bits > MAX_PRECISION as f64 {
            return Err(Error::SeriesOverflow(format!(
                "cancellation in the scale series needs {bits:.0} bits (cap {MAX_PRECISION})"
            )));
        }
        Ok(bits as u32)
    }

    /// Number of jump terms actually present, `k` with `x - d k >= 0` in exact arithmetic.
    fn exact_terms(&self, x: &Float, prec: u32) -> Result<usize> {
        let mut k = self.term_count(x.to_f64())?;
        let d = Float::with_val(prec, self.d);
        let offset = |k: usize| Float::with_val(prec, x - Float::with_val(prec, &d * k as u32));
        while k > 0 && offset(k) < 0 {
            k -= 1;
        }
        while k < MAX_TERMS && offset(k + 1) >= 0 {
            k += 1;
        }
        Ok(k)
    }

    fn inv_factorials(max_m: usize, prec: u32) -> Vec<Float> {
        let mut out = Vec::with_capacity(max_m + 1);
        let mut cur = Float::with_val(prec, 1);
        out.push(cur.clone());
        for m in 1..=max_m {
            cur /= m as u32;
            out.push(cur.clone());
        }
        out
    }

    /// `W(x)` at working precision `prec`.
    pub fn w(&self, x: f64, prec: u32) -> Result<MpMat> {
        let n = self.n;
        let xf = Float::with_val(prec, x);
        let kmax = self.exact_terms(&xf, prec)?;
        let mu = Float::with_val(prec, self.mu);
        let d = Float::with_val(prec, self.d);
        let z = Float::with_val(prec, self.z);
        let inv_fact = Self::inv_factorials(kmax * n + n, prec);

        let mut out = MpMat::zeros(n, prec);
        // e^{mu (x - d k)} by repeated multiplication
        let mut ey = Float::with_val(prec, &mu * &xf).exp();
        let step = Float::with_val(prec, -(Float::with_val(prec, &mu * &d))).exp();
        let mut zk = Float::with_val(prec, 1);
        for k in 0..=kmax {
            let y = Float::with_val(prec, &mu * Float::with_val(prec, &xf - Float::with_val(prec, &d * k as u32)));
            for i in 0..n {
                for j in 0..n {
                    if i > j && k == 0 {
                        continue;
                    }
                    let m = k * n + j - i;
                    let mut term = Float::with_val(prec, (&y).pow(m as u32));
                    term *= &inv_fact[m];
                    term *= &ey;
                    term *= &zk;
                    if m % 2 == 1 {
                        *out.get_mut(i, j) -= term;
                    } else {
                        *out.get_mut(i, j) += term;
                    }
                }
            }
            ey *= &step;
            zk *= &z;
        }
        self.scale_by_theta(&mut out);
        check_finite(&out, x)?;
        Ok(out)
    }

    /// `int_0^x e^{beta y} W(y) dy`, termwise from `int_0^Y g(v, m) dv = sum_{r<=m} g(Y, r) - 1`.
    pub fn integral(&self, x: f64, beta: f64, prec: u32) -> Result<MpMat> {
        let n = self.n;
        let xf = Float::with_val(prec, x);
        let kmax = self.exact_terms(&xf, prec)?;
        let mu = Float::with_val(prec, self.mu);
        let beta_f = Float::with_val(prec, beta);
        // mu + beta in f64 would shift the exponent and break the cancellation
        let nu = Float::with_val(prec, &mu + &beta_f);
        let d = Float::with_val(prec, self.d);
        let z = Float::with_val(prec, self.z);
        let ratio = Float::with_val(prec, &mu / &nu);
        let inv_nu = Float::with_val(prec, 1) / &nu;

        let mut out = MpMat::zeros(n, prec);
        let mut ey = Float::with_val(prec, &nu * &xf).exp();
        let step = Float::with_val(prec, -(Float::with_val(prec, &nu * &d))).exp();
        let shift_step = Float::with_val(prec, &beta_f * &d).exp();
        let mut shift = Float::with_val(prec, 1);
        let mut zk = Float::with_val(prec, 1);
        let one = Float::with_val(prec, 1);
        for k in 0..=kmax {
            let y = Float::with_val(prec, &nu * Float::with_val(prec, &xf - Float::with_val(prec, &d * k as u32)));
            let neg_y = Float::with_val(prec, -&y);
            let m_hi = k * n + n - 1;
            // partial sums of the exponential series of e^{-y}
            let mut partial = Vec::with_capacity(m_hi + 1);
            let mut term = Float::with_val(prec, 1);
            let mut acc = Float::with_val(prec, 1);
            partial.push(acc.clone());
            for r in 1..=m_hi {
                term *= &neg_y;
                term /= r as u32;
                acc += &term;
                partial.push(acc.clone());
            }
            let common = Float::with_val(prec, &zk * &shift) * &inv_nu;
            for i in 0..n {
                for j in 0..n {
                    if i > j && k == 0 {
                        continue;
                    }
                    let m = k * n + j - i;
                    let mut piece = Float::with_val(prec, &ey * &partial[m]);
                    piece -= &one;
                    piece *= &common;
                    if beta != 0.0 {
                        piece *= Float::with_val(prec, (&ratio).pow(m as u32));
                    }
                    *out.get_mut(i, j) += piece;
                }
            }
            ey *= &step;
            zk *= &z;
            shift *= &shift_step;
        }
        self.scale_by_theta(&mut out);
        check_finite(&out, x)?;
        Ok(out)
    }

    fn scale_by_theta(&self, m: &mut MpMat) {
        if self.theta != 1.0 {
            let n = m.dim();
            for i in 0..n {
                for j in 0..n {
                    *m.get_mut(i, j) /= self.theta;
                }
            }
        }
    }
}

fn check_finite(m: &MpMat, x: f64) -> Result<()> {
    let n = m.dim();
    for i in 0..n {
        for j in 0..n {
            let v = m.get(i, j).to_f64();
            if !v.is_finite() {
                return Err(Error::SeriesOverflow(format!(
                    "scale function entry ({i},{j}) at x = {x} exceeds the f64 range"
                )));
            }
        }
    }
    Ok(())
}
