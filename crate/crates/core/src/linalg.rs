//! Small dense linear algebra for the information matrices handled here
//! (a handful of rows and columns). Row-major storage, no BLAS.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows; panics on ragged input.
    pub fn from_rows<R: AsRef<[T]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut m = Self::zeros(values.len(), values.len());
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
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
    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, s: T) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_same_shape(other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| a + b).collect(),
        })
    }

    /// `self += s * other`
    pub fn add_scaled(&mut self, s: T, other: &Self) -> Result<()> {
        self.check_same_shape(other)?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + s * b;
        }
        Ok(())
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                for j in 0..other.cols {
                    out[(i, j)] = out[(i, j)] + a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    pub fn mul_vec(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                actual: x.len(),
            });
        }
        Ok((0..self.rows).map(|i| dot(self.row(i), x)).collect())
    }

    /// `xᵀ M x`
    pub fn quad_form(&self, x: &[T]) -> Result<T> {
        let mx = self.mul_vec(x)?;
        Ok(dot(x, &mx))
    }

    pub fn trace(&self) -> T {
        (0..self.rows.min(self.cols)).map(|i| self[(i, i)]).sum()
    }

    /// `(M + Mᵀ) / 2`
    pub fn symmetrized(&self) -> Self {
        assert!(self.is_square(), "symmetrizing a non-square matrix");
        let half = T::lit(0.5);
        let mut s = self.clone();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                let v = (self[(i, j)] + self[(j, i)]) * half;
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        s
    }

    /// Symmetric within `rel_tol` of the largest absolute entry.
    pub fn is_symmetric(&self, rel_tol: T) -> bool {
        if !self.is_square() {
            return false;
        }
        let scale = self.max_abs().max(T::min_positive_value());
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > rel_tol * scale {
                    return false;
                }
            }
        }
        true
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    /// Principal sub-matrix on `indices` (rows and columns).
    pub fn principal_submatrix(&self, indices: &[usize]) -> Result<Self> {
        for &i in indices {
            if i >= self.rows || i >= self.cols {
                return Err(Error::IndexOutOfRange {
                    index: i,
                    len: self.rows.min(self.cols),
                });
            }
        }
        let k = indices.len();
        let mut out = Self::zeros(k, k);
        for (a, &i) in indices.iter().enumerate() {
            for (b, &j) in indices.iter().enumerate() {
                out[(a, b)] = self[(i, j)];
            }
        }
        Ok(out)
    }

    fn check_same_shape(&self, other: &Self) -> Result<()> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::DimensionMismatch {
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(())
    }
}

impl<T> Index<(usize, usize)> for Matrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.cols + j]
    }
}

impl<T> IndexMut<(usize, usize)> for Matrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.cols + j]
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Lower-triangular Cholesky factor of an SPD matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Cholesky<T> {
    lower: Matrix<T>,
}

impl<T: Scalar> Cholesky<T> {
    /// Returns `None` when a pivot is not comfortably positive, i.e. the
    /// matrix is not numerically positive definite.
    pub fn factor(m: &Matrix<T>) -> Option<Self> {
        if !m.is_square() {
            return None;
        }
        let n = m.rows();
        let max_diag = (0..n).fold(T::zero(), |acc, i| acc.max(m[(i, i)].abs()));
        let floor = T::from_count(n.max(1)) * T::epsilon() * max_diag;
        let mut l = Matrix::zeros(n, n);
        for j in 0..n {
            let mut d = m[(j, j)];
            for k in 0..j {
                d = d - l[(j, k)] * l[(j, k)];
            }
            if !(d > floor) || !d.is_finite() {
                return None;
            }
            let djj = d.sqrt();
            l[(j, j)] = djj;
            for i in (j + 1)..n {
                let mut s = m[(i, j)];
                for k in 0..j {
                    s = s - l[(i, k)] * l[(j, k)];
                }
                l[(i, j)] = s / djj;
            }
        }
        Some(Self { lower: l })
    }

    pub fn lower(&self) -> &Matrix<T> {
        &self.lower
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let n = self.lower.rows();
        assert_eq!(b.len(), n);
        let l = &self.lower;
        let mut y = b.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in 0..i {
                s = s - l[(i, k)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n {
                s = s - l[(k, i)] * y[k];
            }
            y[i] = s / l[(i, i)];
        }
        y
    }

    pub fn inverse(&self) -> Matrix<T> {
        let n = self.lower.rows();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![T::zero(); n];
        for j in 0..n {
            e.iter_mut().for_each(|v| *v = T::zero());
            e[j] = T::one();
            let col = self.solve(&e);
            for i in 0..n {
                inv[(i, j)] = col[i];
            }
        }
        inv.symmetrized()
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
/// Eigenvalues ascending; eigenvectors are the columns of `vectors`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn new(m: &Matrix<T>) -> Self {
        let mut a = m.symmetrized();
        let n = a.rows();
        let mut v = Matrix::identity(n);
        for _sweep in 0..100 {
            let off: T = (0..n)
                .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            let total: T = a.as_slice().iter().map(|&x| x * x).sum();
            if off <= T::epsilon() * T::epsilon() * total || off == T::zero() {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    let apq = a[(p, q)];
                    if apq == T::zero() {
                        continue;
                    }
                    let two = T::lit(2.0);
                    let theta = (a[(q, q)] - a[(p, p)]) / (two * apq);
                    let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                    let c = T::one() / (t * t + T::one()).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                    for k in 0..n {
                        let vkp = v[(k, p)];
                        let vkq = v[(k, q)];
                        v[(k, p)] = c * vkp - s * vkq;
                        v[(k, q)] = s * vkp + c * vkq;
                    }
                }
            }
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&i, &j| a[(i, i)].partial_cmp(&a[(j, j)]).unwrap_or(std::cmp::Ordering::Equal));
        let values = order.iter().map(|&i| a[(i, i)]).collect();
        let mut vectors = Matrix::zeros(n, n);
        for (col, &i) in order.iter().enumerate() {
            for r in 0..n {
                vectors[(r, col)] = v[(r, i)];
            }
        }
        Self { values, vectors }
    }

    pub fn max(&self) -> T {
        self.values.last().copied().unwrap_or(T::zero())
    }

    pub fn min(&self) -> T {
        self.values.first().copied().unwrap_or(T::zero())
    }
}

/// Largest eigenvalue of the symmetric part of `m`.
pub fn max_eigenvalue<T: Scalar>(m: &Matrix<T>) -> T {
    match m.rows() {
        0 => T::zero(),
        1 => m[(0, 0)],
        2 => {
            // closed form keeps the common p0 = 2 path exact
            let a = m[(0, 0)];
            let d = m[(1, 1)];
            let b = (m[(0, 1)] + m[(1, 0)]) * T::lit(0.5);
            let half_tr = (a + d) * T::lit(0.5);
            let half_diff = (a - d) * T::lit(0.5);
            half_tr + (half_diff * half_diff + b * b).sqrt()
        }
        _ => SymmetricEigen::new(m).max(),
    }
}

/// Result of inverting an information matrix. `singular` marks the
/// pseudo-inverse fallback.
#[derive(Debug, Clone)]
pub struct SpdInverse<T> {
    pub matrix: Matrix<T>,
    pub singular: bool,
}

/// Cholesky inverse, falling back to an eigen pseudo-inverse that drops
/// eigenvalues below `1e-12 * λ_max`.
pub fn invert_spd<T: Scalar>(m: &Matrix<T>) -> SpdInverse<T> {
    if let Some(ch) = Cholesky::factor(m) {
        return SpdInverse {
            matrix: ch.inverse(),
            singular: false,
        };
    }
    SpdInverse {
        matrix: pseudo_inverse(m),
        singular: true,
    }
}

pub fn pseudo_inverse<T: Scalar>(m: &Matrix<T>) -> Matrix<T> {
    let eig = SymmetricEigen::new(m);
    let n = m.rows();
    let cutoff = T::lit(1e-12) * eig.max().abs();
    let mut out = Matrix::zeros(n, n);
    for (k, &lam) in eig.values.iter().enumerate() {
        if lam <= cutoff || lam <= T::zero() {
            continue;
        }
        let inv = T::one() / lam;
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = out[(i, j)] + eig.vectors[(i, k)] * inv * eig.vectors[(j, k)];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn max_eigenvalue_small_cases() {
        assert_eq!(max_eigenvalue(&Matrix::diagonal(&[3.0, 1.0])), 3.0);
        let m = Matrix::from_rows(&[[2.0, 1.0], [1.0, 2.0]]);
        assert_relative_eq!(max_eigenvalue(&m), 3.0, max_relative = 1e-15);
        let m3 = Matrix::from_rows(&[[2.0, 1.0, 0.0], [1.0, 2.0, 0.0], [0.0, 0.0, 1.0]]);
        assert_relative_eq!(max_eigenvalue(&m3), 3.0, max_relative = 1e-12);
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = Matrix::from_rows(&[
            [4.0, 1.0, 0.5, 0.1],
            [1.0, 3.0, 0.2, 0.0],
            [0.5, 0.2, 2.0, 0.3],
            [0.1, 0.0, 0.3, 1.0],
        ]);
        let e = SymmetricEigen::new(&m);
        let mut rec = Matrix::<f64>::zeros(4, 4);
        for k in 0..4 {
            for i in 0..4 {
                for j in 0..4 {
                    rec[(i, j)] += e.vectors[(i, k)] * e.values[k] * e.vectors[(j, k)];
                }
            }
        }
        for i in 0..4 {
            for j in 0..4 {
                assert!((rec[(i, j)] - m[(i, j)]).abs() < 1e-12);
            }
        }
        assert!(e.values.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn cholesky_inverse_matches_known_values() {
        let m = Matrix::<f64>::from_rows(&[[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 2.0]]);
        let inv = invert_spd(&m);
        assert!(!inv.singular);
        let prod = m.matmul(&inv.matrix).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((prod[(i, j)] - want).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn singular_matrix_uses_pseudo_inverse() {
        let m = Matrix::from_rows(&[[1.0, 1.0], [1.0, 1.0]]);
        let inv = invert_spd(&m);
        assert!(inv.singular);
        // pinv of [[1,1],[1,1]] is [[.25,.25],[.25,.25]]
        for v in inv.matrix.as_slice() {
            assert_relative_eq!(*v, 0.25, epsilon = 1e-12);
        }
    }

    #[test]
    fn principal_submatrix_rejects_bad_index() {
        let m = Matrix::<f64>::identity(3);
        assert!(matches!(
            m.principal_submatrix(&[0, 3]),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    #[test]
    fn works_in_single_precision() {
        let m = Matrix::from_rows(&[[2.0_f32, 1.0], [1.0, 2.0]]);
        assert!((max_eigenvalue(&m) - 3.0).abs() < 1e-6);
        let inv = invert_spd(&m).matrix;
        assert!((inv[(0, 0)] - 2.0 / 3.0).abs() < 1e-6);
    }
}
