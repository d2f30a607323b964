//! Thin wrappers over nalgebra factorizations.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::C64;

/// Solves `Z X = rhs` for Hermitian positive-definite `Z` by Cholesky.
pub fn hermitian_solve(z: &DMatrix<C64>, rhs: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let chol = z
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Numerical("Cholesky factorization failed: matrix not positive definite".into()))?;
    Ok(chol.solve(rhs))
}

/// Induced 1-norm (max absolute column sum).
pub fn norm1(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// Result of a dense real solve with its reciprocal 1-norm condition number.
#[derive(Debug, Clone)]
pub struct DenseSolve {
    pub x: DVector<f64>,
    pub rcond: f64,
}

/// LU with partial pivoting, one step of iterative refinement, and an exact
/// 1-norm condition number (the systems here are at most a few dozen rows).
pub fn solve_with_condition(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DenseSolve> {
    if !a.is_square() || a.nrows() != b.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {}x{} matrix, rhs of length {}",
            a.nrows(),
            a.ncols(),
            b.len()
        )));
    }
    if a.nrows() == 0 {
        return Ok(DenseSolve { x: DVector::zeros(0), rcond: 1.0 });
    }
    let lu = a.clone().lu();
    let inv = lu.try_inverse().ok_or(Error::DegenerateSystem { rcond: 0.0 })?;
    let rcond = 1.0 / (norm1(a) * norm1(&inv));
    if !rcond.is_finite() {
        return Err(Error::DegenerateSystem { rcond: 0.0 });
    }
    let mut x = lu.solve(b).ok_or(Error::DegenerateSystem { rcond })?;
    let residual = b - a * &x;
    if let Some(dx) = lu.solve(&residual) {
        x += dx;
    }
    Ok(DenseSolve { x, rcond })
}
