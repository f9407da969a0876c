use nalgebra::{DMatrix, DVector};

use super::{FidError, Result};

/// Mean and covariance of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMoments {
    pub mu: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

impl GaussianMoments {
    /// # Panics
    /// If `sigma` is not `dim x dim` for `dim = mu.len()`.
    pub fn new(mu: DVector<f64>, sigma: DMatrix<f64>) -> Self {
        assert_eq!(sigma.shape(), (mu.len(), mu.len()), "covariance shape");
        Self { mu, sigma }
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Column mean and unbiased (n - 1) covariance of an `n x dim` feature matrix,
/// symmetrized as `(S + S^T) / 2`.
pub fn fit_gaussian(features: &DMatrix<f64>) -> Result<GaussianMoments> {
    let n = features.nrows();
    if n < 2 {
        return Err(FidError::TooFewSamples(n));
    }
    let mu = features.row_mean().transpose();
    let mut centered = features.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let s = centered.tr_mul(&centered) / (n as f64 - 1.0);
    let sigma = (&s + s.transpose()) * 0.5;
    Ok(GaussianMoments { mu, sigma })
}
