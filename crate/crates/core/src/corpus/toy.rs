//! Procedural stand-in for a radiograph corpus: two bright capsule "bones"
//! meeting at a joint on a dark background. The joint gap width is the
//! class-controlled parameter; everything else is per-image jitter.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use super::{is_valid_resolution, ImageRecord, Raster};
use crate::rng;

const MIN_GAP: f64 = 0.03;
const MAX_GAP: f64 = 0.18;

/// Joint gap (fraction of the side) for `class` out of `n_classes`.
pub fn joint_gap(class: u32, n_classes: u32) -> f64 {
    if n_classes <= 1 {
        return 0.08;
    }
    MIN_GAP + (MAX_GAP - MIN_GAP) * f64::from(class) / f64::from(n_classes - 1)
}

/// Deterministic toy corpus of `n` images, classes interleaved (`i % n_classes`).
///
/// `n_classes == 1` yields an unlabeled corpus. Pixels lie on the 8-bit grid
/// so the corpus survives packaging unchanged.
///
/// # Panics
/// If `resolution` is not a power of two >= 32 or `n_classes` is 0.
pub fn generate_toy_corpus(n: usize, resolution: usize, n_classes: u32, seed: u64) -> Vec<ImageRecord> {
    assert!(is_valid_resolution(resolution) && resolution >= 32, "toy resolution must be a power of two >= 32");
    assert!(n_classes >= 1, "n_classes must be >= 1");
    (0..n)
        .map(|i| {
            let class = (i as u32) % n_classes;
            let pixels = toy_image(resolution, joint_gap(class, n_classes), seed, i as u64);
            let mut rec = ImageRecord::new(format!("toy{i:06}"), pixels);
            if n_classes > 1 {
                rec.label = Some(class);
            }
            rec
        })
        .collect()
}

fn toy_image(res: usize, gap: f64, seed: u64, index: u64) -> Raster {
    let mut rng = rng::stream(seed, index);
    let cx = 0.5 + rng.random_range(-0.06..0.06);
    let cy = 0.5 + rng.random_range(-0.04..0.04);
    let angle: f64 = rng.random_range(-0.15..0.15);
    let radius = rng.random_range(0.09..0.12);
    let brightness = rng.random_range(0.65..0.85);
    let background = rng.random_range(0.03..0.10);
    let noise = Normal::new(0.0, 0.025).unwrap();

    let (sin, cos) = angle.sin_cos();
    // capsule end-cap centres measured along the bone axis
    let upper_end = -gap / 2.0 - radius;
    let lower_start = gap / 2.0 + radius;
    let pixel = 1.0 / res as f64;

    let mut data = Vec::with_capacity(res * res);
    for y in 0..res {
        for x in 0..res {
            let u = (x as f64 + 0.5) * pixel - cx;
            let v = (y as f64 + 0.5) * pixel - cy;
            let along = u * sin + v * cos;
            let across = u * cos - v * sin;
            let d_upper = segment_distance(along, across, -1.0, upper_end);
            let d_lower = segment_distance(along, across, lower_start, 1.0);
            let d = d_upper.min(d_lower);
            // one-pixel anti-aliased edge; cortex brighter than the medulla
            let coverage = ((radius - d) / pixel + 0.5).clamp(0.0, 1.0);
            let profile = 0.75 + 0.25 * (d.min(radius) / radius).powi(2);
            let value = background + coverage * (brightness * profile - background);
            data.push((value + noise.sample(&mut rng)).clamp(0.0, 1.0));
        }
    }
    Raster::new(res, res, data).quantize_u8()
}

fn segment_distance(along: f64, across: f64, start: f64, end: f64) -> f64 {
    let t = along.clamp(start, end);
    ((along - t).powi(2) + across.powi(2)).sqrt()
}
