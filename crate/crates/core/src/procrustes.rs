//! Orthogonal Procrustes with known correspondences.

use crate::error::{Error, Result};
use crate::linalg::{rank_tolerance, svd, Matrix};
use crate::scalar::Real;

/// Tolerance on `‖QᵀQ − I‖_F` for a matrix to count as orthogonal.
pub const ORTHOGONALITY_TOL: f64 = 1e-8;

/// A square matrix with orthonormal columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Orthogonal<T> {
    q: Matrix<T>,
}

impl<T: Real> Orthogonal<T> {
    /// Validates `QᵀQ = I` within `tol` (Frobenius).
    pub fn new(q: Matrix<T>, tol: T) -> Result<Self> {
        if !q.is_square() {
            return Err(Error::InvalidArgument(format!(
                "orthogonal map must be square, got {}x{}",
                q.rows(),
                q.cols()
            )));
        }
        let err = q.orthonormality_error();
        if !(err <= tol) {
            return Err(Error::Integrity(format!("‖QᵀQ − I‖_F = {err:e} exceeds {tol:e}")));
        }
        Ok(Self { q })
    }

    pub(crate) fn from_trusted(q: Matrix<T>) -> Self {
        debug_assert!(q.is_square());
        Self { q }
    }

    pub fn identity(dim: usize) -> Self {
        Self { q: Matrix::identity(dim) }
    }

    pub fn dim(&self) -> usize {
        self.q.rows()
    }

    pub fn matrix(&self) -> &Matrix<T> {
        &self.q
    }

    pub fn into_matrix(self) -> Matrix<T> {
        self.q
    }

    /// Maps every row of `x`: returns `x·Q`.
    pub fn apply(&self, x: &Matrix<T>) -> Result<Matrix<T>> {
        x.matmul(&self.q)
    }

    pub fn orthonormality_error(&self) -> T {
        self.q.orthonormality_error()
    }
}

/// Orthogonal `Q` minimizing `‖xQ − y‖²_F`, i.e. `U·Vᵀ` from the SVD of `xᵀy`.
///
/// Reflections are allowed (`det Q = −1`). A rank-deficient cross-covariance
/// has no unique minimizer and is reported as [`Error::DegenerateFit`].
pub fn fit_orthogonal<T: Real>(x: &Matrix<T>, y: &Matrix<T>) -> Result<Orthogonal<T>> {
    if x.shape() != y.shape() {
        return Err(Error::InvalidArgument(format!(
            "fit_orthogonal: shapes {}x{} and {}x{} differ",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols()
        )));
    }
    let d = x.cols();
    let cross = x.t_matmul(y)?;
    let dec = svd(&cross)?;
    let rank = dec.rank(rank_tolerance(dec.s[0], d));
    if rank < d {
        return Err(Error::DegenerateFit { rank, dim: d });
    }
    Ok(Orthogonal::from_trusted(dec.u.matmul_t(&dec.v)?))
}

/// `‖xQ − y‖²_F`.
pub fn residual<T: Real>(x: &Matrix<T>, y: &Matrix<T>, q: &Orthogonal<T>) -> Result<T> {
    if x.shape() != y.shape() || x.cols() != q.dim() {
        return Err(Error::InvalidArgument(format!(
            "residual: x {}x{}, y {}x{}, q {}x{}",
            x.rows(),
            x.cols(),
            y.rows(),
            y.cols(),
            q.dim(),
            q.dim()
        )));
    }
    Ok(q.apply(x)?.sub(y)?.frobenius_sq())
}
