use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Cursor, Read, Write};
use std::path::{Path, PathBuf};

use image::codecs::png::{CompressionType, FilterType, PngEncoder};
use image::{ExtendedColorType, ImageEncoder};
use serde::{Deserialize, Serialize};
use zip::write::SimpleFileOptions;
use zip::{CompressionMethod, DateTime, ZipArchive, ZipWriter};

use super::{class_count, is_valid_resolution, CorpusError, ImageRecord, Raster, Result};

pub const MANIFEST_NAME: &str = "dataset.json";
const COMMENT_PREFIX: &str = "gist-dataset v1";

/// A packaged corpus on disk: square power-of-two PNGs plus an optional
/// `dataset.json` label manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetArchive {
    pub path: PathBuf,
    pub resolution: usize,
    pub n_images: usize,
    /// 0 for unlabeled corpora.
    pub n_classes: usize,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    labels: Vec<(String, u32)>,
}

pub fn entry_name(index: usize) -> String {
    format!("img{index:06}.png")
}

/// Write `records` to a zip at `out_path`.
///
/// Pixels are stored as 8-bit grayscale PNG, so intensities are rounded to
/// the nearest `k / 255`; rasters already on that grid round-trip exactly.
/// Entry timestamps are pinned to the zip epoch so identical inputs give
/// identical bytes.
pub fn package_dataset(records: &[ImageRecord], out_path: &Path) -> Result<DatasetArchive> {
    let first = records.first().ok_or(CorpusError::Empty)?;
    let resolution = check_resolution(&first.pixels)?;
    for r in records {
        let res = check_resolution(&r.pixels)?;
        if res != resolution {
            return Err(CorpusError::MixedResolution { first: resolution, other: res });
        }
    }
    let labeled = records.iter().filter(|r| r.label.is_some()).count();
    if labeled != 0 && labeled != records.len() {
        return Err(CorpusError::PartialLabels);
    }

    let mut zip = ZipWriter::new(Cursor::new(Vec::new()));
    let stored = SimpleFileOptions::default()
        .compression_method(CompressionMethod::Stored)
        .last_modified_time(DateTime::default())
        .unix_permissions(0o644);
    let mut labels = Vec::with_capacity(labeled);
    for (i, rec) in records.iter().enumerate() {
        let name = entry_name(i);
        zip.start_file(name.as_str(), stored)?;
        zip.write_all(&encode_png(&rec.pixels)?)?;
        if let Some(l) = rec.label {
            labels.push((name, l));
        }
    }
    let n_classes = class_count(records);
    if labeled > 0 {
        let manifest = serde_json::to_vec(&Manifest { labels })?;
        zip.start_file(MANIFEST_NAME, stored.compression_method(CompressionMethod::Deflated))?;
        zip.write_all(&manifest)?;
    }
    zip.set_comment(format!(
        "{COMMENT_PREFIX}; resolution={resolution}; resampling=bilinear; pixel=gray8"
    ));
    let bytes = zip.finish()?.into_inner();
    write_atomic(out_path, &bytes)?;

    Ok(DatasetArchive {
        path: out_path.to_path_buf(),
        resolution,
        n_images: records.len(),
        n_classes,
    })
}

/// Read an archive written by [`package_dataset`] (or any zip of square PNG/JPEG
/// images with an optional `dataset.json`). Records come back in archive order.
pub fn read_dataset(path: &Path) -> Result<(Vec<ImageRecord>, DatasetArchive)> {
    let mut zip = ZipArchive::new(File::open(path)?)?;
    let mut manifest: Option<Manifest> = None;
    let mut images = Vec::new();
    for i in 0..zip.len() {
        let mut entry = zip.by_index(i)?;
        if entry.is_dir() {
            continue;
        }
        let name = entry.name().to_string();
        let mut buf = Vec::with_capacity(entry.size() as usize);
        entry.read_to_end(&mut buf)?;
        if name == MANIFEST_NAME {
            manifest = Some(serde_json::from_slice(&buf)?);
        } else if is_image_name(&name) {
            let img = image::load_from_memory(&buf)?.to_luma8();
            let (w, h) = img.dimensions();
            images.push((name, Raster::from_u8(w as usize, h as usize, img.as_raw())));
        }
    }

    let labels: Option<HashMap<String, u32>> =
        manifest.map(|m| m.labels.into_iter().collect());
    let label_of = |name: &str| -> Result<Option<u32>> {
        match &labels {
            None => Ok(None),
            Some(map) => map
                .get(name)
                .map(|&l| Some(l))
                .ok_or_else(|| CorpusError::Malformed(format!("{name} missing from manifest"))),
        }
    };
    let mut records = Vec::with_capacity(images.len());
    for (name, pixels) in images {
        let label = label_of(&name)?;
        records.push(ImageRecord {
            id: name.trim_end_matches(".png").to_string(),
            pixels,
            source_path: Some(format!("{}:{name}", path.display())),
            label,
        });
    }
    let first = records.first().ok_or(CorpusError::Empty)?;
    let resolution = check_resolution(&first.pixels)?;
    if let Some(bad) = records.iter().find(|r| r.pixels.width() != resolution || !r.pixels.is_square()) {
        return Err(CorpusError::MixedResolution { first: resolution, other: bad.pixels.width() });
    }
    let archive = DatasetArchive {
        path: path.to_path_buf(),
        resolution,
        n_images: records.len(),
        n_classes: class_count(&records),
    };
    Ok((records, archive))
}

fn is_image_name(name: &str) -> bool {
    let lower = name.to_ascii_lowercase();
    [".png", ".jpg", ".jpeg"].iter().any(|ext| lower.ends_with(ext))
}

fn check_resolution(pixels: &Raster) -> Result<usize> {
    if !pixels.is_square() {
        return Err(CorpusError::NotSquare { width: pixels.width(), height: pixels.height() });
    }
    if !is_valid_resolution(pixels.width()) {
        return Err(CorpusError::NotPowerOfTwo(pixels.width()));
    }
    Ok(pixels.width())
}

/// 8-bit grayscale PNG bytes of `pixels`.
pub fn encode_png(pixels: &Raster) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    PngEncoder::new_with_quality(&mut out, CompressionType::Best, FilterType::Adaptive).write_image(
        &pixels.to_u8(),
        pixels.width() as u32,
        pixels.height() as u32,
        ExtendedColorType::L8,
    )?;
    Ok(out)
}

/// Write via a sibling temp file and rename, so readers never see a partial file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = BufWriter::new(File::create(&tmp)?);
        f.write_all(bytes)?;
        f.flush()?;
    }
    std::fs::rename(&tmp, path)
}
