use nalgebra::DVector;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{self, CMatrix};

/// Tolerance on trace, hermiticity and negative eigenvalues of a state.
pub const STATE_TOLERANCE: f64 = 1e-10;

/// Hermitian, positive, unit-trace matrix with its validity certificate.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    matrix: CMatrix,
    trace: f64,
    min_eigenvalue: f64,
}

impl DensityOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::invalid("density matrix is not square"));
        }
        let defect = linalg::hermiticity_defect(&matrix);
        if defect > STATE_TOLERANCE {
            return Err(Error::PreconditionViolation(format!(
                "density matrix is not Hermitian (defect {defect:e})"
            )));
        }
        let trace = linalg::trace(&matrix).re;
        if (trace - 1.0).abs() > STATE_TOLERANCE {
            return Err(Error::NormalizationFailure {
                defect: (trace - 1.0).abs(),
            });
        }
        let min_eigenvalue = linalg::min_eigenvalue(&matrix);
        if min_eigenvalue < -STATE_TOLERANCE {
            return Err(Error::PreconditionViolation(format!(
                "density matrix has eigenvalue {min_eigenvalue:e}"
            )));
        }
        Ok(Self {
            matrix,
            trace,
            min_eigenvalue,
        })
    }

    /// `|ψ⟩⟨ψ| / ⟨ψ|ψ⟩`
    pub fn pure(psi: &DVector<Complex64>) -> Result<Self> {
        let norm2 = psi.norm_squared();
        if norm2 == 0.0 {
            return Err(Error::invalid("cannot build a state from the zero vector"));
        }
        Self::new((psi * psi.adjoint()).unscale(norm2))
    }

    pub fn basis_state(dim: usize, i: usize) -> Self {
        let mut m = CMatrix::zeros(dim, dim);
        m[(i, i)] = linalg::ONE;
        Self {
            matrix: m,
            trace: 1.0,
            min_eigenvalue: 0.0,
        }
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.trace
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.min_eigenvalue
    }

    pub fn purity(&self) -> f64 {
        linalg::purity(&self.matrix)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_invalid_matrices() {
        let half = linalg::real_matrix(&[&[0.5, 0.0], &[0.0, 0.4]]);
        assert!(matches!(DensityOperator::new(half), Err(Error::NormalizationFailure { .. })));
        let negative = linalg::real_matrix(&[&[1.5, 0.0], &[0.0, -0.5]]);
        assert!(matches!(DensityOperator::new(negative), Err(Error::PreconditionViolation(_))));
        let skew = linalg::real_matrix(&[&[0.5, 0.1], &[0.0, 0.5]]);
        assert!(DensityOperator::new(skew).is_err());
    }

    #[test]
    fn pure_state_has_unit_purity() {
        let psi = DVector::from_vec(vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 1.0)]);
        let rho = DensityOperator::pure(&psi).unwrap();
        assert!((rho.purity() - 1.0).abs() < 1e-14);
        assert!(rho.min_eigenvalue() > -1e-14);
    }
}
