use crate::error::{Error, Result};
use crate::linalg::{max_eigenvalue, Cholesky, Matrix};
use crate::scalar::Scalar;

/// Fixed-size confidence ellipsoid
/// `{ z : (z − c)ᵀ V⁻¹ (z − c) / n ≤ d1² / μ }` with `μ = λ_max(n V)`.
///
/// Its longest axis is `2 d1` whatever `V` and `n` are.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceEllipsoid<T> {
    pub center: Vec<T>,
    /// Covariance-scale shape matrix `V`.
    pub shape: Matrix<T>,
    /// Sample size the precision statistic is scaled by.
    pub n: T,
    pub d1: T,
    /// `λ_max(n V)`
    pub mu: T,
    shape_chol: Cholesky<T>,
}

impl<T: Scalar> ConfidenceEllipsoid<T> {
    pub fn new(center: Vec<T>, shape: Matrix<T>, n: T, d1: T) -> Result<Self> {
        if shape.rows() != center.len() || !shape.is_square() {
            return Err(Error::DimensionMismatch {
                expected: center.len(),
                actual: shape.rows(),
            });
        }
        let shape_chol = Cholesky::factor(&shape).ok_or(Error::SingularInformation)?;
        let mu = max_eigenvalue(&shape.scale(n));
        Ok(Self {
            center,
            shape,
            n,
            d1,
            mu,
            shape_chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    /// `S = (z − c)ᵀ V⁻¹ (z − c)`
    pub fn statistic(&self, z: &[T]) -> Result<T> {
        if z.len() != self.center.len() {
            return Err(Error::DimensionMismatch {
                expected: self.center.len(),
                actual: z.len(),
            });
        }
        let diff: Vec<T> = z.iter().zip(&self.center).map(|(&a, &b)| a - b).collect();
        let solved = self.shape_chol.solve(&diff);
        Ok(diff.iter().zip(&solved).map(|(&a, &b)| a * b).sum())
    }

    pub fn contains(&self, z: &[T]) -> Result<bool> {
        Ok(self.statistic(z)? / self.n <= self.d1 * self.d1 / self.mu)
    }

    /// Squared radius in the `V⁻¹` metric: `n d1² / μ`.
    pub fn radius_sq(&self) -> T {
        self.n * self.d1 * self.d1 / self.mu
    }

    /// Semi-axis lengths are `sqrt(radius² λᵢ(V))`; returns twice the largest.
    pub fn max_axis_length(&self) -> T {
        T::lit(2.0) * (self.radius_sq() * max_eigenvalue(&self.shape)).sqrt()
    }
}
