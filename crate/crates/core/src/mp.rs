//! Small dense matrices over MPFR floats.
//!
//! The Erlang scale series and the solves against `W(x)` lose roughly
//! `log2 e^{c x}` bits to cancellation and conditioning, so those paths run at a
//! working precision chosen from the largest argument and only round to `f64`
//! at the end.

use nalgebra::{DMatrix, DVector};
use rug::{Assign, Float};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub(crate) struct MpMat {
    n: usize,
    prec: u32,
    data: Vec<Float>,
}

impl MpMat {
    pub fn zeros(n: usize, prec: u32) -> Self {
        Self {
            n,
            prec,
            data: vec![Float::new(prec); n * n],
        }
    }

    #[cfg(test)]
    pub fn from_f64(m: &DMatrix<f64>, prec: u32) -> Self {
        let n = m.nrows();
        let mut out = Self::zeros(n, prec);
        for i in 0..n {
            for j in 0..n {
                out.data[i * n + j] = Float::with_val(prec, m[(i, j)]);
            }
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> &Float {
        &self.data[i * self.n + j]
    }

    pub fn get_mut(&mut self, i: usize, j: usize) -> &mut Float {
        &mut self.data[i * self.n + j]
    }

    #[cfg(test)]
    pub fn mul(&self, other: &MpMat) -> MpMat {
        let n = self.n;
        let mut out = MpMat::zeros(n, self.prec);
        let mut tmp = Float::new(self.prec);
        for i in 0..n {
            for j in 0..n {
                let acc = &mut out.data[i * n + j];
                for k in 0..n {
                    tmp.assign(self.get(i, k) * other.get(k, j));
                    *acc += &tmp;
                }
            }
        }
        out
    }

    /// `M v` for a column vector.
    pub fn mul_vec(&self, v: &[Float]) -> Vec<Float> {
        (0..self.n)
            .map(|i| dot(self.prec, (0..self.n).map(|k| (self.get(i, k), &v[k]))))
            .collect()
    }

    /// `v M` for a row vector.
    pub fn vec_mul(&self, v: &[Float]) -> Vec<Float> {
        (0..self.n)
            .map(|j| dot(self.prec, (0..self.n).map(|k| (&v[k], self.get(k, j)))))
            .collect()
    }

    /// Row vector `y` with `y M = v`, by partial-pivoting elimination on `M^T`.
    pub fn solve_left(&self, v: &[Float]) -> Result<Vec<Float>> {
        let n = self.n;
        // augmented transpose
        let mut a: Vec<Vec<Float>> = (0..n)
            .map(|i| {
                let mut row: Vec<Float> = (0..n).map(|j| self.get(j, i).clone()).collect();
                row.push(v[i].clone());
                row
            })
            .collect();
        let scale = self
            .data
            .iter()
            .map(|x| x.to_f64().abs())
            .fold(0.0f64, f64::max);
        for col in 0..n {
            let pivot = (col..n)
                .max_by(|&p, &q| {
                    a[p][col]
                        .clone()
                        .abs()
                        .partial_cmp(&a[q][col].clone().abs())
                        .unwrap_or(std::cmp::Ordering::Equal)
                })
                .unwrap_or(col);
            a.swap(col, pivot);
            if a[col][col].is_zero() || !a[col][col].is_finite() {
                return Err(Error::IllConditionedSolve(format!(
                    "zero pivot in column {col} (matrix scale {scale:e})"
                )));
            }
            let piv = a[col][col].clone();
            for r in (col + 1)..n {
                if a[r][col].is_zero() {
                    continue;
                }
                let factor = Float::with_val(self.prec, &a[r][col] / &piv);
                for c in col..=n {
                    let t = Float::with_val(self.prec, &factor * &a[col][c]);
                    a[r][c] -= t;
                }
            }
        }
        let mut y = vec![Float::new(self.prec); n];
        for i in (0..n).rev() {
            let mut acc = a[i][n].clone();
            for k in (i + 1)..n {
                acc -= Float::with_val(self.prec, &a[i][k] * &y[k]);
            }
            y[i] = acc / &a[i][i];
        }
        Ok(y)
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j).to_f64())
    }
}

pub(crate) fn dot<'a>(prec: u32, pairs: impl Iterator<Item = (&'a Float, &'a Float)>) -> Float {
    let mut acc = Float::new(prec);
    let mut tmp = Float::new(prec);
    for (a, b) in pairs {
        tmp.assign(a * b);
        acc += &tmp;
    }
    acc
}

pub(crate) fn vec_from_f64(v: &DVector<f64>, prec: u32) -> Vec<Float> {
    v.iter().map(|x| Float::with_val(prec, *x)).collect()
}

pub(crate) fn vec_to_f64(v: &[Float]) -> DVector<f64> {
    DVector::from_iterator(v.len(), v.iter().map(Float::to_f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solve_left_recovers_row() {
        let m = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0]);
        let mp = MpMat::from_f64(&m, 200);
        let y = [1.0, -2.0, 0.5];
        let v = mp.vec_mul(&y.iter().map(|x| Float::with_val(200, *x)).collect::<Vec<_>>());
        let back = mp.solve_left(&v).unwrap();
        for (a, b) in back.iter().zip(y) {
            assert!((a.to_f64() - b).abs() < 1e-30);
        }
    }

    #[test]
    fn singular_is_reported() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
        let mp = MpMat::from_f64(&m, 100);
        let v = vec_from_f64(&DVector::from_vec(vec![1.0, 1.0]), 100);
        assert!(matches!(mp.solve_left(&v), Err(Error::IllConditionedSolve(_))));
    }

    #[test]
    fn product_matches_f64() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 0.25]);
        let p = MpMat::from_f64(&a, 128).mul(&MpMat::from_f64(&b, 128)).to_f64();
        assert_eq!(p, &a * &b);
    }
}
