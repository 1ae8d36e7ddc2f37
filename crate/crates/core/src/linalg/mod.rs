//! Dense linear algebra shared by the rest of the crate.

mod eig;
mod matrix;
mod nnls;

pub use eig::{sym_eig, SymEig, JACOBI_TOL, MAX_SWEEPS, SYMMETRY_TOL};
pub use matrix::{dot, norm2, DenseMatrix};
pub use nnls::{
    cholesky_solve, kkt_residual, nnls_solve, quadratic_gradient, quadratic_objective, NnlsSolution, DEFAULT_NNLS_TOL,
};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NonSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("matrix is empty")]
    EmptyMatrix,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no convergence after {iterations} iterations")]
    NoConvergence { iterations: usize },
}

/// Largest singular value, `sqrt(lambda_max(M' M))`.
pub fn spectral_norm(m: &DenseMatrix) -> Result<f64, LinalgError> {
    if m.is_empty() {
        return Err(LinalgError::EmptyMatrix);
    }
    // Form the smaller Gram matrix.
    let gram = if m.rows() >= m.cols() {
        m.transpose().matmul(m)?
    } else {
        m.matmul(&m.transpose())?
    };
    let eig = sym_eig(&gram)?;
    Ok(eig.max_value().unwrap_or(0.0).max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Power iteration on M'M, independent of the Jacobi path.
    fn power_iteration_norm(m: &DenseMatrix) -> f64 {
        let mut x = vec![1.0; m.cols()];
        let mut sigma = 0.0;
        for _ in 0..5000 {
            let y = m.mat_vec(&x).unwrap();
            let z = m.transpose().mat_vec(&y).unwrap();
            let nz = norm2(&z);
            if nz == 0.0 {
                return 0.0;
            }
            x = z.iter().map(|v| v / nz).collect();
            sigma = norm2(&m.mat_vec(&x).unwrap());
        }
        sigma
    }

    #[test]
    fn spectral_norm_identity_and_diagonal() {
        assert!((spectral_norm(&DenseMatrix::identity(4)).unwrap() - 1.0).abs() < 1e-14);
        let d = DenseMatrix::from_diag(&[3.0, -5.0]);
        assert!((spectral_norm(&d).unwrap() - 5.0).abs() < 1e-12);
    }

    #[test]
    fn spectral_norm_empty() {
        assert_eq!(spectral_norm(&DenseMatrix::zeros(0, 3)), Err(LinalgError::EmptyMatrix));
    }

    #[test]
    fn spectral_norm_matches_power_iteration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let data: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let m = DenseMatrix::from_vec(4, 3, data).unwrap();
        let a = spectral_norm(&m).unwrap();
        let b = power_iteration_norm(&m);
        assert!((a - b).abs() <= 1e-6 * b, "{a} vs {b}");
    }
}
