//! Small dense linear-algebra helpers shared by the solvers.
//!
//! `vec` follows the column-stacking convention, which coincides with the
//! column-major storage of [`DMatrix`]: `vec(X)[i + j*M] == X[(i, j)]`.
//! With that convention `(A ⊗ B) vec(X) = vec(B X Aᵀ)`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Stack the columns of `x` into a vector.
pub fn vec(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Inverse of [`vec()`] for a square `m × m` matrix.
pub fn unvec(v: &DVector<f64>, m: usize) -> DMatrix<f64> {
    assert_eq!(v.len(), m * m, "unvec: length {} is not {m}²", v.len());
    DMatrix::from_column_slice(m, m, v.as_slice())
}

/// Commutation matrix `K` with `K vec(X) = vec(Xᵀ)` for `m × m` matrices.
pub fn commutation(m: usize) -> DMatrix<f64> {
    let n = m * m;
    let mut k = DMatrix::zeros(n, n);
    for i in 0..m {
        for j in 0..m {
            // vec(Xᵀ)[i + j*m] = X[j, i] = vec(X)[j + i*m]
            k[(i + j * m, j + i * m)] = 1.0;
        }
    }
    k
}

pub fn ensure_square(a: &DMatrix<f64>, what: &str) -> Result<usize> {
    if a.nrows() != a.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(a.nrows())
}

pub fn ensure_dim(a: &DMatrix<f64>, m: usize, what: &str) -> Result<()> {
    if a.nrows() != m || a.ncols() != m {
        return Err(Error::Dimension(format!(
            "{what} must be {m}x{m}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().symmetric_eigenvalues().min()
}

/// Largest absolute entry, `0` for an empty matrix.
pub fn max_abs(a: &DMatrix<f64>) -> f64 {
    a.iter().fold(0.0_f64, |acc, x| acc.max(x.abs()))
}

/// Row sums `A·1`.
pub fn row_sums(a: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(a.nrows(), a.row_iter().map(|r| r.sum()))
}

/// `{x}⁺` applied entrywise.
pub fn positive_part(a: &DMatrix<f64>) -> DMatrix<f64> {
    a.map(|x| x.max(0.0))
}
