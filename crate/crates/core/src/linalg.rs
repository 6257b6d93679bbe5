//! Dense row-major matrices and the few factorizations the toolkit needs.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::Scalar;

/// Maximum number of one-sided Jacobi sweeps before giving up on further
/// orthogonalization. Small dense matrices converge in well under 20.
const MAX_JACOBI_SWEEPS: usize = 80;

/// Dense row-major `rows × cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Config(format!(
                "matrix dimensions must be positive, got {rows}x{cols}"
            )));
        }
        if data.len() != rows * cols {
            return Err(Error::Config(format!(
                "matrix {rows}x{cols} needs {} elements, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diag(&vec![T::one(); n])
    }

    pub fn from_diag(diag: &[T]) -> Self {
        let n = diag.len();
        let mut m = Self::zeros(n, n);
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    #[inline]
    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self[(c, r)])
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, c: T) -> Self {
        self.map(|v| v * c)
    }

    pub fn cast<U: Scalar>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    /// Index of the first NaN or infinite element, if any.
    pub fn first_non_finite(&self) -> Option<usize> {
        self.data.iter().position(|v| !v.is_finite())
    }

    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::Config(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * rhs.cols..(i + 1) * rhs.cols];
            for (k, &a) in self.row(i).iter().enumerate() {
                if a == T::zero() {
                    continue;
                }
                for (o, &b) in out_row.iter_mut().zip(rhs.row(k)) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `A Aᵀ`, the `rows × rows` Gram matrix of the rows.
    pub fn row_gram(&self) -> Self {
        let mut g = Self::zeros(self.rows, self.rows);
        for i in 0..self.rows {
            for j in 0..=i {
                let v: T = self.row(i).iter().zip(self.row(j)).map(|(&a, &b)| a * b).sum();
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }

    /// Square root of the sum of squared entries.
    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&v| v * v).sum::<T>().sqrt()
    }

    /// Singular values in descending order, `min(rows, cols)` of them.
    ///
    /// One-sided (Hestenes) Jacobi: plane rotations are applied to pairs of
    /// columns of the taller orientation until every pair is orthogonal to
    /// working precision; the singular values are then the column norms.
    /// This keeps high relative accuracy for the small singular values, which
    /// the condition number depends on.
    pub fn singular_values(&self) -> Vec<T> {
        // Columns of the tall orientation, each stored contiguously.
        let (len, ncols) = if self.rows >= self.cols {
            (self.rows, self.cols)
        } else {
            (self.cols, self.rows)
        };
        let mut columns: Vec<Vec<T>> = if self.rows >= self.cols {
            (0..self.cols)
                .map(|c| (0..self.rows).map(|r| self[(r, c)]).collect())
                .collect()
        } else {
            (0..self.rows).map(|r| self.row(r).to_vec()).collect()
        };
        debug_assert!(columns.iter().all(|c| c.len() == len));

        let eps = T::epsilon();
        for _ in 0..MAX_JACOBI_SWEEPS {
            let mut rotated = false;
            for i in 0..ncols {
                for j in (i + 1)..ncols {
                    let (head, tail) = columns.split_at_mut(j);
                    let (ci, cj) = (&mut head[i], &mut tail[0]);
                    let mut alpha = T::zero();
                    let mut beta = T::zero();
                    let mut gamma = T::zero();
                    for (&x, &y) in ci.iter().zip(cj.iter()) {
                        alpha += x * x;
                        beta += y * y;
                        gamma += x * y;
                    }
                    if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                        continue;
                    }
                    rotated = true;
                    let two = T::one() + T::one();
                    let zeta = (beta - alpha) / (two * gamma);
                    let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                    let c = T::one() / (T::one() + t * t).sqrt();
                    let s = c * t;
                    for (x, y) in ci.iter_mut().zip(cj.iter_mut()) {
                        let (xv, yv) = (*x, *y);
                        *x = c * xv - s * yv;
                        *y = s * xv + c * yv;
                    }
                }
            }
            if !rotated {
                break;
            }
        }

        let mut sigmas: Vec<T> = columns
            .iter()
            .map(|c| c.iter().map(|&v| v * v).sum::<T>().sqrt())
            .collect();
        // stable: equal values keep column order
        sigmas.sort_by(|a, b| b.partial_cmp(a).expect("finite singular values"));
        sigmas
    }

    /// Natural-log determinant of a symmetric positive definite matrix via
    /// Cholesky with symmetric (diagonal) pivoting.
    ///
    /// Returns `None` when the matrix is not square or a pivot falls to or
    /// below `rel_tol` times the largest initial diagonal entry, i.e. the
    /// matrix is singular or indefinite at that tolerance.
    pub fn spd_log_det(&self, rel_tol: T) -> Option<T> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut a = self.clone();
        let max_diag = (0..n).map(|i| a[(i, i)]).fold(T::zero(), T::max);
        if max_diag <= T::zero() {
            return None;
        }
        let floor = rel_tol * max_diag;
        let mut log_det = T::zero();
        for k in 0..n {
            // bring the largest remaining diagonal entry to position k
            let p = (k..n)
                .max_by(|&x, &y| a[(x, x)].partial_cmp(&a[(y, y)]).expect("finite"))
                .expect("non-empty range");
            if p != k {
                a.swap_symmetric(k, p);
            }
            let pivot = a[(k, k)];
            if !(pivot > floor) {
                return None;
            }
            let l_kk = pivot.sqrt();
            log_det += pivot.ln();
            for i in (k + 1)..n {
                a[(i, k)] /= l_kk;
            }
            for j in (k + 1)..n {
                let l_jk = a[(j, k)];
                for i in j..n {
                    let v = a[(i, j)] - a[(i, k)] * l_jk;
                    a[(i, j)] = v;
                }
            }
            // keep the trailing block symmetric for the next pivot search
            for j in (k + 1)..n {
                for i in (j + 1)..n {
                    a[(j, i)] = a[(i, j)];
                }
            }
        }
        Some(log_det)
    }

    /// Lower-triangular `L` with `L Lᵀ = self`, or `None` if the matrix is
    /// not symmetric positive definite.
    pub fn cholesky(&self) -> Option<Self> {
        if self.rows != self.cols {
            return None;
        }
        let n = self.rows;
        let mut l = Self::zeros(n, n);
        for j in 0..n {
            let mut d = self[(j, j)];
            for k in 0..j {
                d -= l[(j, k)] * l[(j, k)];
            }
            if !(d > T::zero()) {
                return None;
            }
            let d = d.sqrt();
            l[(j, j)] = d;
            for i in (j + 1)..n {
                let mut v = self[(i, j)];
                for k in 0..j {
                    v -= l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = v / d;
            }
        }
        Some(l)
    }

    /// Solves `self · x = b` for lower-triangular `self` by forward
    /// substitution.
    pub fn solve_lower(&self, b: &[T]) -> Vec<T> {
        let n = self.rows;
        let mut x = vec![T::zero(); n];
        for i in 0..n {
            let mut v = b[i];
            for k in 0..i {
                v -= self[(i, k)] * x[k];
            }
            x[i] = v / self[(i, i)];
        }
        x
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[T]) -> Vec<T> {
        (0..self.rows)
            .map(|r| self.row(r).iter().zip(v).map(|(&a, &b)| a * b).sum())
            .collect()
    }

    fn swap_symmetric(&mut self, a: usize, b: usize) {
        for c in 0..self.cols {
            self.data.swap(a * self.cols + c, b * self.cols + c);
        }
        for r in 0..self.rows {
            self.data.swap(r * self.cols + a, r * self.cols + b);
        }
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;

    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.cols + c]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.cols + c]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn random(rows: usize, cols: usize, seed: u64) -> Matrix<f64> {
        let mut s = Stream::new(seed);
        Matrix::from_fn(rows, cols, |_, _| s.uniform_in(-1.0, 1.0))
    }

    #[test]
    fn identity_and_diag_spectra() {
        assert_eq!(Matrix::<f64>::identity(3).singular_values(), vec![1.0; 3]);
        let d = Matrix::from_diag(&[1.0, 4.0, 2.0]);
        assert_eq!(d.singular_values(), vec![4.0, 2.0, 1.0]);
    }

    #[test]
    fn negative_diag_gives_absolute_values() {
        let d = Matrix::from_diag(&[-3.0_f64, 0.5]);
        assert_eq!(d.singular_values(), vec![3.0, 0.5]);
    }

    #[test]
    fn wide_and_tall_agree() {
        let a = random(3, 7, 1);
        let s1 = a.singular_values();
        let s2 = a.transpose().singular_values();
        assert_eq!(s1.len(), 3);
        for (x, y) in s1.iter().zip(&s2) {
            assert!((x - y).abs() <= 1e-13 * s1[0]);
        }
    }

    #[test]
    fn rank_one_outer_product() {
        let u = [1.0_f64, 2.0, 2.0];
        let v = [3.0, 4.0];
        let a = Matrix::from_fn(3, 2, |r, c| u[r] * v[c]);
        let s = a.singular_values();
        assert!((s[0] - 15.0).abs() < 1e-12);
        assert!(s[1].abs() < 1e-12);
    }

    #[test]
    fn f32_spectrum_close_to_f64() {
        let a = random(5, 4, 2);
        let s64 = a.singular_values();
        let s32 = a.cast::<f32>().singular_values();
        for (x, y) in s64.iter().zip(&s32) {
            assert!((x - *y as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn matmul_shapes() {
        let a = random(2, 3, 4);
        let b = random(3, 5, 5);
        let c = a.matmul(&b).unwrap();
        assert_eq!((c.rows(), c.cols()), (2, 5));
        let expect: f64 = (0..3).map(|k| a[(1, k)] * b[(k, 4)]).sum();
        assert!((c[(1, 4)] - expect).abs() < 1e-15);
        assert!(b.matmul(&a).is_err());
    }

    #[test]
    fn row_gram_matches_matmul() {
        let a = random(3, 4, 6);
        let g = a.row_gram();
        let h = a.matmul(&a.transpose()).unwrap();
        for (x, y) in g.as_slice().iter().zip(h.as_slice()) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn log_det_of_diagonal() {
        let d = Matrix::from_diag(&[2.0_f64, 3.0, 0.5]);
        let ld = d.spd_log_det(1e-14).unwrap();
        assert!((ld - 3.0_f64.ln()).abs() < 1e-14);
    }

    #[test]
    fn log_det_rejects_singular_and_indefinite() {
        let mut s = Matrix::<f64>::zeros(2, 2);
        s[(0, 0)] = 1.0;
        assert!(s.spd_log_det(1e-12).is_none());
        let ind = Matrix::new(2, 2, vec![1.0, 2.0, 2.0, 1.0]).unwrap();
        assert!(ind.spd_log_det(1e-12).is_none());
    }

    #[test]
    fn log_det_pivoting_handles_small_leading_entry() {
        // [[1e-8, 1], [1, 3]] is indefinite; [[1e-3, 1e-3], [1e-3, 4]] is not
        let a = Matrix::new(2, 2, vec![1e-3, 1e-3, 1e-3, 4.0]).unwrap();
        let expect = (1e-3_f64 * 4.0 - 1e-6).ln();
        assert!((a.spd_log_det(1e-14).unwrap() - expect).abs() < 1e-12);
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = random(3, 5, 8);
        let g = a.row_gram();
        let l = g.cholesky().unwrap();
        let back = l.matmul(&l.transpose()).unwrap();
        for (x, y) in g.as_slice().iter().zip(back.as_slice()) {
            assert!((x - y).abs() < 1e-13);
        }
        let x = l.solve_lower(&[1.0, 2.0, 3.0]);
        let b = l.mul_vec(&x);
        for (u, v) in b.iter().zip([1.0, 2.0, 3.0]) {
            assert!((u - v).abs() < 1e-12);
        }
        let ld: f64 = (0..3).map(|i| 2.0 * l[(i, i)].ln()).sum();
        assert!((ld - g.spd_log_det(1e-14).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn new_validates_length() {
        assert!(Matrix::<f64>::new(2, 2, vec![0.0; 3]).is_err());
        assert!(Matrix::<f64>::new(0, 2, vec![]).is_err());
    }
}
