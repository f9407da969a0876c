use nalgebra::DMatrix;

use crate::corpus::{bilinear, Raster};

/// Deterministic map from an image to a fixed-length feature vector.
pub trait FeatureExtractor: Send + Sync {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn extract(&self, image: &Raster) -> Vec<f64>;
}

const GRID: usize = 16;
const BINS: usize = 16;
pub const DESK_DIM: usize = GRID * GRID + BINS;

/// Weight-free extractor: a bilinear 16x16 thumbnail (256 dims) followed by a
/// 16-bin intensity histogram normalized to sum 1.
#[derive(Debug, Clone)]
pub struct DeskExtractor {
    resolution_in: usize,
    name: String,
}

pub fn desk_extractor(resolution_in: usize) -> DeskExtractor {
    DeskExtractor { resolution_in, name: "desk-v1".to_string() }
}

impl DeskExtractor {
    pub fn resolution_in(&self) -> usize {
        self.resolution_in
    }
}

impl FeatureExtractor for DeskExtractor {
    fn name(&self) -> &str {
        &self.name
    }

    fn dim(&self) -> usize {
        DESK_DIM
    }

    fn extract(&self, image: &Raster) -> Vec<f64> {
        let mut out = bilinear(image, GRID, GRID).into_data();
        let mut hist = [0.0; BINS];
        for &v in image.data() {
            let bin = ((v.clamp(0.0, 1.0) * BINS as f64) as usize).min(BINS - 1);
            hist[bin] += 1.0;
        }
        let total = image.data().len() as f64;
        out.extend(hist.iter().map(|h| h / total));
        out
    }
}

/// `n x dim` feature matrix, one row per image in input order.
pub fn features(images: &[Raster], extractor: &dyn FeatureExtractor) -> DMatrix<f64> {
    let dim = extractor.dim();
    let mut data = Vec::with_capacity(images.len() * dim);
    for img in images {
        let f = extractor.extract(img);
        assert_eq!(f.len(), dim, "extractor {} returned {} dims", extractor.name(), f.len());
        data.extend(f);
    }
    DMatrix::from_row_slice(images.len(), dim, &data)
}
