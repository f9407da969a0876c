//! Fréchet distance between Gaussians fitted to image features.
//!
//! FID values are relative to the feature extractor: scores computed with
//! the desk extractor are not comparable to Inception-based scores.

mod extractor;
mod moments;
mod sqrtm;

pub use extractor::{desk_extractor, features, DeskExtractor, FeatureExtractor, DESK_DIM};
pub use moments::{fit_gaussian, GaussianMoments};
pub use sqrtm::{is_symmetric, matrix_sqrt_psd, symmetric_eigen};

use nalgebra::DMatrix;
use thiserror::Error;

use crate::corpus::Raster;

#[derive(Debug, Error, PartialEq)]
pub enum FidError {
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0} vs {1}")]
    DimMismatch(usize, usize),
}

pub type Result<T> = std::result::Result<T, FidError>;

/// Condition number above which both covariances get a ridge before the
/// square-root product.
pub const MAX_CONDITION: f64 = 1e12;
pub const RIDGE: f64 = 1e-6;

/// `|mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2)`, clamped at 0.
pub fn frechet_distance(m1: &GaussianMoments, m2: &GaussianMoments) -> Result<f64> {
    if m1.dim() != m2.dim() {
        return Err(FidError::DimMismatch(m1.dim(), m2.dim()));
    }
    let dim = m1.dim();
    let mean_term = (&m1.mu - &m2.mu).norm_squared();

    let (ev1, q1) = symmetric_eigen(&m1.sigma)?;
    let (ev2, q2) = symmetric_eigen(&m2.sigma)?;
    let ridge = if condition(&ev1) > MAX_CONDITION || condition(&ev2) > MAX_CONDITION { RIDGE } else { 0.0 };
    let sqrt1 = psd_root(&ev1, &q1, ridge);
    let sqrt2 = psd_root(&ev2, &q2, ridge);
    // Tr (S1^1/2 S2 S1^1/2)^1/2 is the nuclear norm of S2^1/2 S1^1/2; singular
    // values keep full absolute precision where eigenvalues of the product
    // would only give sqrt(eps).
    let tr_sqrt = (&sqrt2 * &sqrt1).singular_values().sum();

    let tr1 = m1.sigma.trace() + ridge * dim as f64;
    let tr2 = m2.sigma.trace() + ridge * dim as f64;
    let d = mean_term + tr1 + tr2 - 2.0 * tr_sqrt;
    Ok(d.max(0.0))
}

fn psd_root(values: &nalgebra::DVector<f64>, q: &DMatrix<f64>, ridge: f64) -> DMatrix<f64> {
    let d = DMatrix::from_diagonal(&values.map(|l| (l + ridge).max(0.0).sqrt()));
    let s = q * d * q.transpose();
    (&s + s.transpose()) * 0.5
}

fn condition(eigenvalues: &nalgebra::DVector<f64>) -> f64 {
    let max = eigenvalues.max();
    let min = eigenvalues.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Result of comparing a generated image set against a reference set.
#[derive(Debug, Clone)]
pub struct FidReport {
    pub fid: f64,
    pub n_real: usize,
    pub n_gen: usize,
    pub extractor_name: String,
    pub moments_real: GaussianMoments,
    pub moments_gen: GaussianMoments,
}

impl FidReport {
    /// Flat `key=value` record.
    pub fn to_record(&self) -> String {
        format!(
            "fid={:.6},n_real={},n_gen={},extractor_name={}",
            self.fid, self.n_real, self.n_gen, self.extractor_name
        )
    }

    pub const CSV_HEADER: &'static str = "fid,n_real,n_gen,extractor_name";

    pub fn csv_row(&self) -> String {
        format!("{:.6},{},{},{}", self.fid, self.n_real, self.n_gen, self.extractor_name)
    }
}

/// FID between `real` and `gen` under `extractor`.
pub fn compute_fid(real: &[Raster], gen: &[Raster], extractor: &dyn FeatureExtractor) -> Result<FidReport> {
    for n in [real.len(), gen.len()] {
        if n < 2 {
            return Err(FidError::TooFewSamples(n));
        }
        if n < extractor.dim() + 1 {
            log::warn!("FID with {n} samples for a {}-dim extractor: covariance is rank deficient", extractor.dim());
        }
    }
    let moments_real = fit_gaussian(&features(real, extractor))?;
    let moments_gen = fit_gaussian(&features(gen, extractor))?;
    let fid = frechet_distance(&moments_real, &moments_gen)?;
    Ok(FidReport {
        fid,
        n_real: real.len(),
        n_gen: gen.len(),
        extractor_name: extractor.name().to_string(),
        moments_real,
        moments_gen,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use nalgebra::DVector;
    use rand::Rng as _;

    fn moments(mu: &[f64], diag: &[f64]) -> GaussianMoments {
        GaussianMoments::new(DVector::from_column_slice(mu), DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    fn random_psd(dim: usize, r: &mut rng::Rng) -> DMatrix<f64> {
        let b = DMatrix::from_fn(dim, dim, |_, _| r.random_range(-1.0..1.0));
        &b * b.transpose()
    }

    #[test]
    fn one_dimensional_closed_form() {
        let d = frechet_distance(&moments(&[0.0], &[1.0]), &moments(&[3.0], &[4.0])).unwrap();
        assert!((d - 10.0).abs() < 1e-12);
    }

    #[test]
    fn diagonal_reduces_per_axis() {
        let d = frechet_distance(&moments(&[1.0, 1.0], &[1.0, 4.0]), &moments(&[1.0, 1.0], &[9.0, 1.0])).unwrap();
        assert!((d - 5.0).abs() < 1e-12);
    }

    #[test]
    fn identical_moments_give_zero() {
        let mut r = rng::seeded(5);
        let s = random_psd(6, &mut r);
        let m = GaussianMoments::new(DVector::from_fn(6, |_, _| r.random_range(-1.0..1.0)), s);
        assert!(frechet_distance(&m, &m).unwrap() < 1e-10);
    }

    #[test]
    fn singular_covariances_are_regularised() {
        // rank-1 covariance: condition number is infinite
        let s = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let m = GaussianMoments::new(DVector::zeros(2), s);
        assert!(frechet_distance(&m, &m).unwrap() < 1e-10);
        let zero = GaussianMoments::new(DVector::zeros(2), DMatrix::zeros(2, 2));
        assert!(frechet_distance(&zero, &zero).unwrap() < 1e-10);
    }

    #[test]
    fn dim_mismatch() {
        assert_eq!(
            frechet_distance(&moments(&[0.0], &[1.0]), &moments(&[0.0, 0.0], &[1.0, 1.0])),
            Err(FidError::DimMismatch(1, 2))
        );
    }

    #[test]
    fn report_record_format() {
        let m = moments(&[0.0], &[1.0]);
        let rep = FidReport {
            fid: 1.5,
            n_real: 3,
            n_gen: 4,
            extractor_name: "desk-v1".into(),
            moments_real: m.clone(),
            moments_gen: m,
        };
        assert_eq!(rep.to_record(), "fid=1.500000,n_real=3,n_gen=4,extractor_name=desk-v1");
    }
}
