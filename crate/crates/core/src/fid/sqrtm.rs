use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{FidError, Result};

const SYMMETRY_TOL: f64 = 1e-8;

/// `true` if `max |S - S^T| <= 1e-8 * max(1, max |S|)`.
pub fn is_symmetric(s: &DMatrix<f64>) -> bool {
    asymmetry(s) <= SYMMETRY_TOL * s.amax().max(1.0)
}

fn asymmetry(s: &DMatrix<f64>) -> f64 {
    if !s.is_square() {
        return f64::INFINITY;
    }
    (s - s.transpose()).amax()
}

/// Eigenvalues and eigenvectors (as columns) of a symmetric matrix.
pub fn symmetric_eigen(s: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if !is_symmetric(s) {
        return Err(FidError::NotSymmetric(asymmetry(s)));
    }
    let eig = SymmetricEigen::new((s + s.transpose()) * 0.5);
    Ok((eig.eigenvalues, eig.eigenvectors))
}

/// Principal square root of a symmetric PSD matrix via `Q diag(sqrt(max(l, 0))) Q^T`.
pub fn matrix_sqrt_psd(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let (values, q) = symmetric_eigen(s)?;
    let d = DMatrix::from_diagonal(&values.map(|l| l.max(0.0).sqrt()));
    let root = &q * d * q.transpose();
    Ok((&root + root.transpose()) * 0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn identity_and_diagonal() {
        let i = DMatrix::<f64>::identity(4, 4);
        assert!((matrix_sqrt_psd(&i).unwrap() - &i).amax() < 1e-14);
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&[4.0, 9.0]));
        let r = matrix_sqrt_psd(&d).unwrap();
        assert!((r - DMatrix::from_diagonal(&DVector::from_column_slice(&[2.0, 3.0]))).amax() < 1e-14);
    }

    #[test]
    fn squares_back_for_random_psd() {
        let mut r = rng::seeded(8);
        let b = DMatrix::from_fn(8, 8, |_, _| r.random_range(-1.0..1.0));
        let a = &b * b.transpose();
        let root = matrix_sqrt_psd(&a).unwrap();
        assert!((&root * &root - &a).norm() <= 1e-6 * a.norm());
        assert!(is_symmetric(&root));
    }

    #[test]
    fn negative_round_off_is_clamped() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1e-12]);
        let r = matrix_sqrt_psd(&s).unwrap();
        assert_eq!(r[(1, 1)], 0.0);
    }

    #[test]
    fn rejects_asymmetric() {
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matches!(matrix_sqrt_psd(&s), Err(FidError::NotSymmetric(_))));
        assert!(matches!(matrix_sqrt_psd(&DMatrix::zeros(2, 3)), Err(FidError::NotSymmetric(_))));
    }
}
