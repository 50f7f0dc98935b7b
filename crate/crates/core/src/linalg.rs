//! Small dense complex linear algebra.
//!
//! The matrices in this crate are tiny (at most a few dozen rows), so a
//! row-major `Vec` with naive kernels is all that is needed. Hermitian
//! systems are always solved through a Cholesky factor; no inverse is ever
//! formed.

use std::ops::{Index, IndexMut};

use num_complex::Complex;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{to_f64, Scalar, C};

/// Dense row-major complex matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CMat<T> {
    rows: usize,
    cols: usize,
    data: Vec<Complex<T>>,
}

impl<T: Scalar> CMat<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![C::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = C::one();
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C<T>) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C<T>>) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data has wrong length");
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[C<T>] {
        &self.data
    }

    pub fn column(&self, c: usize) -> Vec<C<T>> {
        (0..self.rows).map(|r| self[(r, c)]).collect()
    }

    pub fn adjoint(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)].conj())
    }

    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "matmul shape mismatch");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a.is_zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    out.data[i * rhs.cols + j] += a * rhs[(k, j)];
                }
            }
        }
        out
    }

    /// `A x`.
    pub fn mul_vec(&self, x: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.cols, x.len(), "mul_vec shape mismatch");
        (0..self.rows)
            .map(|r| {
                let row = &self.data[r * self.cols..(r + 1) * self.cols];
                row.iter().zip(x).map(|(a, b)| *a * *b).sum()
            })
            .collect()
    }

    /// `Aᴴ x`.
    pub fn adjoint_mul_vec(&self, x: &[C<T>]) -> Vec<C<T>> {
        assert_eq!(self.rows, x.len(), "adjoint_mul_vec shape mismatch");
        let mut out = vec![C::zero(); self.cols];
        for r in 0..self.rows {
            let xr = x[r];
            for c in 0..self.cols {
                out[c] += self.data[r * self.cols + c].conj() * xr;
            }
        }
        out
    }

    /// `A += s · x yᴴ`.
    pub fn add_outer(&mut self, s: C<T>, x: &[C<T>], y: &[C<T>]) {
        assert_eq!(x.len(), self.rows);
        assert_eq!(y.len(), self.cols);
        for r in 0..self.rows {
            let sx = s * x[r];
            for c in 0..self.cols {
                self.data[r * self.cols + c] += sx * y[c].conj();
            }
        }
    }

    pub fn add_diag(&mut self, d: T) {
        let n = self.rows.min(self.cols);
        for i in 0..n {
            self.data[i * self.cols + i].re += d;
        }
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn trace(&self) -> C<T> {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|z| z.norm_sqr()).sum::<T>().sqrt()
    }

    /// `‖A − Aᴴ‖_F`; zero for Hermitian matrices.
    pub fn hermitian_defect(&self) -> T {
        assert_eq!(self.rows, self.cols);
        let mut acc = T::zero();
        for r in 0..self.rows {
            for c in 0..self.cols {
                acc += (self[(r, c)] - self[(c, r)].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// Real quadratic form `xᴴ A x` for Hermitian `A`.
    pub fn quad_form(&self, x: &[C<T>]) -> T {
        dot(x, &self.mul_vec(x)).re
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> CMat<U> {
        CMat {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| C::new(f(z.re), f(z.im))).collect(),
        }
    }
}

impl<T> Index<(usize, usize)> for CMat<T> {
    type Output = Complex<T>;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for CMat<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut Complex<T> {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

/// `xᴴ y`.
pub fn dot<T: Scalar>(x: &[C<T>], y: &[C<T>]) -> C<T> {
    debug_assert_eq!(x.len(), y.len());
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub fn norm_sqr<T: Scalar>(x: &[C<T>]) -> T {
    x.iter().map(|z| z.norm_sqr()).sum()
}

pub fn scale<T: Scalar>(x: &[C<T>], s: T) -> Vec<C<T>> {
    x.iter().map(|z| z * s).collect()
}

/// Cholesky factor `A = L Lᴴ` of a Hermitian positive-definite matrix.
#[derive(Clone, Debug)]
pub struct HermitianCholesky<T> {
    n: usize,
    l: Vec<Complex<T>>,
}

impl<T: Scalar> HermitianCholesky<T> {
    /// Factors `a`, reading only its lower triangle.
    pub fn new(a: &CMat<T>) -> Result<Self> {
        assert_eq!(a.rows(), a.cols(), "cholesky needs a square matrix");
        let n = a.rows();
        let mut l = vec![C::zero(); n * n];
        for j in 0..n {
            let mut d = a[(j, j)].re;
            for k in 0..j {
                d -= l[j * n + k].norm_sqr();
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: to_f64(d),
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = C::new(djj, T::zero());
            for i in (j + 1)..n {
                let mut s = a[(i, j)];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k].conj();
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    /// Solves `A x = b`.
    pub fn solve(&self, b: &[C<T>]) -> Vec<C<T>> {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i].conj() * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        y
    }

    /// `bᴴ A⁻¹ b`, computed as `‖L⁻¹ b‖²`.
    pub fn inv_quad_form(&self, b: &[C<T>]) -> T {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i].re;
        }
        norm_sqr(&y)
    }

    /// Natural log of `det A`.
    pub fn ln_det(&self) -> T {
        let two = T::one() + T::one();
        (0..self.n).map(|i| self.l[i * self.n + i].re.ln()).sum::<T>() * two
    }
}

/// Cholesky solver for real symmetric positive-definite systems stored
/// row-major in a flat slice.
#[derive(Clone, Debug)]
pub struct RealCholesky<T> {
    n: usize,
    l: Vec<T>,
}

impl<T: Scalar> RealCholesky<T> {
    pub fn new(a: &[T], n: usize) -> Result<Self> {
        assert_eq!(a.len(), n * n);
        let mut l = vec![T::zero(); n * n];
        for j in 0..n {
            let mut d = a[j * n + j];
            for k in 0..j {
                d -= l[j * n + k] * l[j * n + k];
            }
            if !(d > T::zero()) || !d.is_finite() {
                return Err(Error::NotPositiveDefinite {
                    pivot: j,
                    value: to_f64(d),
                });
            }
            let djj = d.sqrt();
            l[j * n + j] = djj;
            for i in (j + 1)..n {
                let mut s = a[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / djj;
            }
        }
        Ok(Self { n, l })
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.n;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s -= self.l[i * n + k] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s -= self.l[k * n + i] * y[k];
            }
            y[i] = s / self.l[i * n + i];
        }
        y
    }
}

/// Solves the dense real system `A x = b` (`A` row-major, n×n) by Gaussian
/// elimination with partial pivoting. Returns `None` when `A` is singular.
pub fn solve_real<T: Scalar>(a: &[T], n: usize, b: &[T]) -> Option<Vec<T>> {
    assert_eq!(a.len(), n * n);
    assert_eq!(b.len(), n);
    let mut m = a.to_vec();
    let mut x = b.to_vec();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| {
            m[i * n + col]
                .abs()
                .partial_cmp(&m[j * n + col].abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })?;
        let p = m[piv * n + col];
        if p == T::zero() || !p.is_finite() {
            return None;
        }
        if piv != col {
            for c in 0..n {
                m.swap(piv * n + c, col * n + c);
            }
            x.swap(piv, col);
        }
        for r in (col + 1)..n {
            let f = m[r * n + col] / p;
            if f == T::zero() {
                continue;
            }
            for c in col..n {
                let v = m[col * n + c];
                m[r * n + c] -= f * v;
            }
            let v = x[col];
            x[r] -= f * v;
        }
    }
    for r in (0..n).rev() {
        let mut s = x[r];
        for c in (r + 1)..n {
            s -= m[r * n + c] * x[c];
        }
        x[r] = s / m[r * n + r];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> C<f64> {
        C::new(re, im)
    }

    fn sample_hpd(n: usize) -> CMat<f64> {
        // B Bᴴ + I with a fixed, non-symmetric B.
        let b = CMat::from_fn(n, n, |r, col| {
            c((r as f64 + 1.0) * 0.3 - col as f64 * 0.1, (r * col) as f64 * 0.07 - 0.2)
        });
        let mut a = b.matmul(&b.adjoint());
        a.add_diag(1.0);
        a
    }

    #[test]
    fn cholesky_solves_hermitian_system() {
        let a = sample_hpd(5);
        let x_true: Vec<_> = (0..5).map(|i| c(i as f64 - 2.0, 0.5 * i as f64)).collect();
        let b = a.mul_vec(&x_true);
        let chol = HermitianCholesky::new(&a).unwrap();
        let x = chol.solve(&b);
        for (u, v) in x.iter().zip(&x_true) {
            assert!((u - v).norm() < 1e-12);
        }
        let q = chol.inv_quad_form(&b);
        assert!((q - dot(&b, &x).re).abs() < 1e-10 * q.abs());
    }

    #[test]
    fn solve_real_handles_pivoting() {
        let a: [f64; 9] = [0.0, 2.0, 1.0, 1.0, 1.0, 0.0, 2.0, 0.0, 3.0];
        let x = solve_real(&a, 3, &[7.0, 3.0, 11.0]).unwrap();
        for (u, v) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-12);
        }
        assert!(solve_real(&[1.0f64, 2.0, 2.0, 4.0], 2, &[1.0, 1.0]).is_none());
    }

    #[test]
    fn ln_det_matches_2x2_formula() {
        let mut a = CMat::<f64>::zeros(2, 2);
        a[(0, 0)] = c(3.0, 0.0);
        a[(1, 1)] = c(2.0, 0.0);
        a[(0, 1)] = c(0.5, 1.0);
        a[(1, 0)] = c(0.5, -1.0);
        let det: f64 = 6.0 - (0.25 + 1.0);
        let chol = HermitianCholesky::new(&a).unwrap();
        assert!((chol.ln_det() - det.ln()).abs() < 1e-14);
    }

    #[test]
    fn cholesky_rejects_indefinite() {
        let mut a = CMat::<f64>::identity(2);
        a[(1, 1)] = c(-1.0, 0.0);
        assert!(matches!(
            HermitianCholesky::new(&a),
            Err(Error::NotPositiveDefinite { pivot: 1, .. })
        ));
    }

    #[test]
    fn adjoint_mul_vec_matches_explicit_adjoint() {
        let m = CMat::from_fn(3, 2, |r, col| c(r as f64 - col as f64, 1.0 + r as f64));
        let x = vec![c(1.0, -1.0), c(0.5, 2.0), c(-1.0, 0.0)];
        let lhs = m.adjoint_mul_vec(&x);
        let rhs = m.adjoint().mul_vec(&x);
        for (u, v) in lhs.iter().zip(&rhs) {
            assert!((u - v).norm() < 1e-14);
        }
    }

    #[test]
    fn outer_product_is_hermitian() {
        let x = vec![c(1.0, 2.0), c(-0.5, 0.25), c(0.0, 1.0)];
        let mut m = CMat::<f64>::zeros(3, 3);
        m.add_outer(c(2.0, 0.0), &x, &x);
        assert!(m.hermitian_defect() < 1e-15);
        assert!((m.trace().re - 2.0 * norm_sqr(&x)).abs() < 1e-14);
    }

    #[test]
    fn real_cholesky_solves() {
        let a = [4.0, 1.0, 0.5, 1.0, 3.0, 0.2, 0.5, 0.2, 2.0];
        let chol = RealCholesky::new(&a, 3).unwrap();
        let x = chol.solve(&[1.0, 2.0, 3.0]);
        for i in 0..3 {
            let r: f64 = (0..3).map(|j| a[i * 3 + j] * x[j]).sum();
            assert!((r - [1.0, 2.0, 3.0][i]).abs() < 1e-13);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let a = sample_hpd(3).map(|v| v as f32);
        let chol = HermitianCholesky::new(&a).unwrap();
        let b = vec![C::new(1.0f32, 0.0); 3];
        let x = chol.solve(&b);
        let r = a.mul_vec(&x);
        for z in r {
            assert!((z - C::new(1.0, 0.0)).norm() < 1e-4);
        }
    }
}
