//! Dense linear solves backed by nalgebra's LU decomposition.
//!
//! Target systems are small (S <= 500 states), so dense LU with partial
//! pivoting is adequate and exact up to rounding.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// Residual tolerance for the exact solvers.
pub const SOLVE_TOLERANCE: f64 = 1e-10;

/// Solves `A x = b` with dense LU (partial pivoting) and verifies the
/// residual in the max norm.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu.solve(b).ok_or(Error::SingularSystem)?;
    let residual = (a * &x - b).amax();
    if residual > SOLVE_TOLERANCE {
        return Err(Error::SolveTolerance {
            residual,
            tolerance: SOLVE_TOLERANCE,
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solves_small_system() {
        let a = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 3.0]);
        let b = DVector::from_row_slice(&[5.0, 10.0]);
        let x = solve(&a, &b).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert!((x[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn singular_system_reported() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_row_slice(&[1.0, 2.0]);
        assert!(solve(&a, &b).is_err());
    }
}
