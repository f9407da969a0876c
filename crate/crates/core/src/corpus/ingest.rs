use std::path::{Path, PathBuf};

use super::{CorpusError, ImageRecord, Raster, Result};

/// Raw images read from a directory tree, before squaring and resizing.
#[derive(Debug, Clone)]
pub struct IngestedCorpus {
    pub records: Vec<ImageRecord>,
    /// Class names in label-index order; empty when unlabeled.
    pub class_names: Vec<String>,
}

/// Decode one PNG or JPEG file, converting color inputs to luma.
pub fn load_image(path: &Path) -> Result<ImageRecord> {
    let img = image::open(path)
        .map_err(|e| CorpusError::Decode { path: path.display().to_string(), reason: e.to_string() })?
        .to_luma8();
    let (w, h) = img.dimensions();
    let id = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(ImageRecord {
        id,
        pixels: Raster::from_u8(w as usize, h as usize, img.as_raw()),
        source_path: Some(path.display().to_string()),
        label: None,
    })
}

/// Read every PNG/JPEG under `dir`.
///
/// With `labeled`, each immediate subdirectory is a class; classes are
/// indexed in sorted name order. Otherwise all images found recursively are
/// returned unlabeled. Record ids are the paths relative to `dir`, so they are
/// unique within the corpus.
pub fn ingest_dir(dir: &Path, labeled: bool) -> Result<IngestedCorpus> {
    let mut records = Vec::new();
    let mut class_names = Vec::new();
    if labeled {
        let mut classes: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_dir())
            .collect();
        classes.sort();
        for (label, class_dir) in classes.iter().enumerate() {
            class_names.push(class_dir.file_name().unwrap().to_string_lossy().into_owned());
            for path in image_files(class_dir)? {
                let mut rec = load_image(&path)?;
                rec.id = relative_id(dir, &path);
                rec.label = Some(label as u32);
                records.push(rec);
            }
        }
    } else {
        for path in image_files(dir)? {
            let mut rec = load_image(&path)?;
            rec.id = relative_id(dir, &path);
            records.push(rec);
        }
    }
    if records.is_empty() {
        return Err(CorpusError::Empty);
    }
    Ok(IngestedCorpus { records, class_names })
}

fn relative_id(root: &Path, path: &Path) -> String {
    path.strip_prefix(root).unwrap_or(path).to_string_lossy().replace('\\', "/")
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if is_supported(&path) {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

fn is_supported(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};

    #[test]
    fn rgb_is_converted_to_luma_and_classes_follow_dir_order() {
        let dir = tempfile::tempdir().unwrap();
        for (class, value) in [("b_late", 200u8), ("a_early", 10u8)] {
            std::fs::create_dir(dir.path().join(class)).unwrap();
            let img = RgbImage::from_pixel(6, 4, Rgb([value, value, value]));
            img.save(dir.path().join(class).join("x.png")).unwrap();
            img.save(dir.path().join(class).join("y.jpg")).unwrap();
        }
        std::fs::write(dir.path().join("a_early").join("notes.txt"), "skip").unwrap();

        let corpus = ingest_dir(dir.path(), true).unwrap();
        assert_eq!(corpus.class_names, vec!["a_early", "b_late"]);
        assert_eq!(corpus.records.len(), 4);
        let first = &corpus.records[0];
        assert_eq!(first.id, "a_early/x.png");
        assert_eq!(first.label, Some(0));
        assert_eq!((first.pixels.width(), first.pixels.height()), (6, 4));
        assert!((first.pixels.get(0, 0) - 10.0 / 255.0).abs() < 1e-12);
        assert_eq!(corpus.records[3].label, Some(1));

        let flat = ingest_dir(dir.path(), false).unwrap();
        assert_eq!(flat.records.len(), 4);
        assert!(flat.records.iter().all(|r| r.label.is_none()));
    }

    #[test]
    fn empty_dir_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(ingest_dir(dir.path(), false), Err(CorpusError::Empty)));
    }
}
