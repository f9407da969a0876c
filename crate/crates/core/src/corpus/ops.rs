use serde::{Deserialize, Serialize};

use super::{is_valid_resolution, CorpusError, ImageRecord, Raster, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SquareMode {
    /// Zero-pad the shorter axis symmetrically up to the longer one.
    #[default]
    PadToMax,
    /// Center-crop the longer axis down to the shorter one.
    CropToMin,
}

pub fn to_square(image: &ImageRecord, mode: SquareMode) -> ImageRecord {
    let src = &image.pixels;
    let (w, h) = (src.width(), src.height());
    if w == h {
        return image.clone();
    }
    let pixels = match mode {
        SquareMode::PadToMax => {
            let side = w.max(h);
            // odd remainders go to the bottom/right band
            let (ox, oy) = ((side - w) / 2, (side - h) / 2);
            let mut out = Raster::filled(side, side, 0.0);
            for y in 0..h {
                for x in 0..w {
                    out.set(x + ox, y + oy, src.get(x, y));
                }
            }
            out
        }
        SquareMode::CropToMin => {
            let side = w.min(h);
            let (ox, oy) = ((w - side) / 2, (h - side) / 2);
            let mut out = Raster::filled(side, side, 0.0);
            for y in 0..side {
                for x in 0..side {
                    out.set(x, y, src.get(x + ox, y + oy));
                }
            }
            out
        }
    };
    ImageRecord { pixels, ..image.clone() }
}

pub fn resize_pow2(image: &ImageRecord, target: usize) -> Result<ImageRecord> {
    if !is_valid_resolution(target) {
        return Err(CorpusError::NotPowerOfTwo(target));
    }
    let src = &image.pixels;
    if !src.is_square() {
        return Err(CorpusError::NotSquare { width: src.width(), height: src.height() });
    }
    if src.width() == target {
        return Ok(image.clone());
    }
    let pixels = bilinear(src, target, target).clamp_unit();
    Ok(ImageRecord { pixels, ..image.clone() })
}

/// Bilinear resampling with half-pixel centers and edge clamping.
///
/// Halving a side averages each 2x2 block exactly.
pub fn bilinear(src: &Raster, out_w: usize, out_h: usize) -> Raster {
    let sx = src.width() as f64 / out_w as f64;
    let sy = src.height() as f64 / out_h as f64;
    let xs: Vec<(usize, usize, f64)> =
        (0..out_w).map(|x| sample_coords(x, sx, src.width())).collect();
    let mut out = Vec::with_capacity(out_w * out_h);
    for y in 0..out_h {
        let (y0, y1, ty) = sample_coords(y, sy, src.height());
        for &(x0, x1, tx) in &xs {
            let top = src.get(x0, y0) * (1.0 - tx) + src.get(x1, y0) * tx;
            let bottom = src.get(x0, y1) * (1.0 - tx) + src.get(x1, y1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    Raster::new(out_w, out_h, out)
}

fn sample_coords(dst: usize, scale: f64, len: usize) -> (usize, usize, f64) {
    let pos = ((dst as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
    let i0 = pos.floor() as usize;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, pos - i0 as f64)
}
