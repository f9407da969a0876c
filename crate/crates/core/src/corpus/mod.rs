//! Image corpora: ingest, the square/power-of-two input contract, zip
//! packaging with a label manifest, train/test splitting and a procedural
//! toy corpus.

mod archive;
mod ingest;
mod ops;
mod split;
mod toy;

pub use archive::{package_dataset, read_dataset, DatasetArchive, MANIFEST_NAME};
pub use archive::encode_png;
pub(crate) use archive::write_atomic;
pub use ingest::{ingest_dir, load_image, IngestedCorpus};
pub use ops::{bilinear, resize_pow2, to_square, SquareMode};
pub use split::{filter_labels, split_dataset, SplitSpec};
pub use toy::generate_toy_corpus;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{0} is not a power of two >= 4")]
    NotPowerOfTwo(usize),
    #[error("image is {width}x{height}, expected a square")]
    NotSquare { width: usize, height: usize },
    #[error("records mix resolutions {first} and {other}")]
    MixedResolution { first: usize, other: usize },
    #[error("labels must be present on all records or on none")]
    PartialLabels,
    #[error("need at least {needed} records, got {got}")]
    TooFewRecords { needed: usize, got: usize },
    #[error("invalid split fraction {0}, expected 0 < f < 1")]
    InvalidFraction(f64),
    #[error("empty corpus")]
    Empty,
    #[error("malformed archive: {0}")]
    Malformed(String),
    #[error("unsupported image {path}: {reason}")]
    Decode { path: String, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Zip(#[from] zip::result::ZipError),
    #[error(transparent)]
    Image(#[from] image::ImageError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// Power-of-two resolutions accepted by the pipeline: 4, 8, 16, ...
pub fn is_valid_resolution(n: usize) -> bool {
    n >= 4 && n.is_power_of_two()
}

/// Row-major single-channel raster with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Raster {
    /// # Panics
    /// If `data.len() != width * height` or either side is zero.
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Self {
        assert!(width >= 1 && height >= 1, "raster sides must be >= 1");
        assert_eq!(data.len(), width * height, "raster data length");
        Self { width, height, data }
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    pub fn clamp_unit(mut self) -> Self {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    /// Round every intensity to the nearest 8-bit level `k / 255`.
    pub fn quantize_u8(mut self) -> Self {
        for v in &mut self.data {
            *v = f64::from(to_u8(*v)) / 255.0;
        }
        self
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| to_u8(v)).collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Self {
        Self::new(width, height, bytes.iter().map(|&b| f64::from(b) / 255.0).collect())
    }

    /// 90 degree clockwise rotation.
    pub fn rotate90(&self) -> Self {
        let (w, h) = (self.width, self.height);
        let mut out = Raster::filled(h, w, 0.0);
        for y in 0..h {
            for x in 0..w {
                out.set(h - 1 - y, x, self.get(x, y));
            }
        }
        out
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// One grayscale image with provenance and an optional class label.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Raster,
    pub source_path: Option<String>,
    pub label: Option<u32>,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, pixels: Raster) -> Self {
        Self { id: id.into(), pixels, source_path: None, label: None }
    }

    pub fn with_label(mut self, label: u32) -> Self {
        self.label = Some(label);
        self
    }

    pub fn resolution(&self) -> Option<usize> {
        self.pixels.is_square().then_some(self.pixels.width())
    }
}

/// Number of classes implied by the labels: `max + 1`, or 0 when unlabeled.
pub fn class_count(records: &[ImageRecord]) -> usize {
    records.iter().filter_map(|r| r.label).max().map_or(0, |m| m as usize + 1)
}

/// Extension point for training-time data augmentation.
///
/// The pipeline ships only [`NoAugmentation`]; implementations must be pure
/// functions of `(image, rng state)` so seeded runs stay reproducible.
pub trait Augmentation: Send + Sync {
    fn apply(&self, image: &mut [f64], resolution: usize, rng: &mut crate::rng::Rng);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoAugmentation;

impl Augmentation for NoAugmentation {
    fn apply(&self, _image: &mut [f64], _resolution: usize, _rng: &mut crate::rng::Rng) {}
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn power_of_two_check() {
        let accepted: Vec<usize> = (0..=1024).filter(|&n| is_valid_resolution(n)).collect();
        assert_eq!(accepted, vec![4, 8, 16, 32, 64, 128, 256, 512, 1024]);
        assert!(is_valid_resolution(1 << 40));
        assert!(!is_valid_resolution(96));
        assert!(!is_valid_resolution(usize::MAX));
    }

    #[test]
    fn quantize_is_idempotent() {
        let r = Raster::new(2, 1, vec![0.123, 0.999]).quantize_u8();
        assert_eq!(r.clone().quantize_u8(), r);
        assert_eq!(Raster::from_u8(2, 1, &r.to_u8()), r);
    }

    #[test]
    fn rotate90_moves_corner() {
        let mut r = Raster::filled(3, 2, 0.0);
        r.set(0, 0, 1.0);
        let rot = r.rotate90();
        assert_eq!((rot.width(), rot.height()), (2, 3));
        assert_eq!(rot.get(1, 0), 1.0);
    }

    #[test]
    fn class_count_from_labels() {
        let img = Raster::filled(4, 4, 0.0);
        let recs = vec![
            ImageRecord::new("a", img.clone()).with_label(0),
            ImageRecord::new("b", img).with_label(3),
        ];
        assert_eq!(class_count(&recs), 4);
        assert_eq!(class_count(&[]), 0);
    }
}
