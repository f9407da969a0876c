//! Seeded image generation from a trained checkpoint.

use std::path::Path;

use thiserror::Error;

use crate::corpus::{package_dataset, CorpusError, DatasetArchive, ImageRecord};
use crate::gan::{render, LatentBatch, TrainingCheckpoint};
use crate::rng;

/// Stream id of the per-seed latent draws.
const LATENT_STREAM: u64 = 7;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("class {class} out of range for a checkpoint with {n_classes} classes")]
    ClassOutOfRange { class: u32, n_classes: usize },
    #[error("checkpoint is class-conditional ({0} classes); a class index is required")]
    MissingClass(usize),
    #[error("n_per_class must be >= 1")]
    InvalidCount,
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

pub type Result<T> = std::result::Result<T, SynthesisError>;

/// The latent vector for `seed`; independent of any other seed in the batch.
pub fn latent_for_seed(seed: u64, latent_dim: usize) -> Vec<f64> {
    LatentBatch::sample(1, latent_dim, None, &mut rng::stream(seed, LATENT_STREAM)).z
}

/// One image per seed, intensities in `[0, 1]`. The class index is required
/// exactly when the checkpoint is class-conditional.
pub fn generate(checkpoint: &TrainingCheckpoint, seeds: &[u64], class_idx: Option<u32>) -> Result<Vec<ImageRecord>> {
    let k = checkpoint.n_classes();
    match class_idx {
        Some(c) if c as usize >= k => return Err(SynthesisError::ClassOutOfRange { class: c, n_classes: k }),
        None if k > 0 => return Err(SynthesisError::MissingClass(k)),
        _ => {}
    }
    let ld = checkpoint.arch().latent_dim;
    let z = LatentBatch {
        z: seeds.iter().flat_map(|&s| latent_for_seed(s, ld)).collect(),
        n: seeds.len(),
        dim: ld,
        labels: class_idx.map(|c| vec![c; seeds.len()]),
    };
    let images = render(&checkpoint.generator, &z, checkpoint.resolution());
    Ok(seeds
        .iter()
        .zip(images)
        .map(|(&s, px)| {
            let id = match class_idx {
                Some(c) => format!("class{c}-seed{s}"),
                None => format!("seed{s}"),
            };
            let rec = ImageRecord::new(id, px);
            match class_idx {
                Some(c) => rec.with_label(c),
                None => rec,
            }
        })
        .collect())
}

/// Package `n_per_class` images per class (or `n_per_class` in total for an
/// unconditional checkpoint) into a labeled archive. Class `c` uses seeds
/// `seed + c * n_per_class + i`.
pub fn emit_synthetic_dataset(
    checkpoint: &TrainingCheckpoint,
    n_per_class: usize,
    seed: u64,
    out_path: &Path,
) -> Result<DatasetArchive> {
    if n_per_class == 0 {
        return Err(SynthesisError::InvalidCount);
    }
    let k = checkpoint.n_classes();
    let mut records = Vec::with_capacity(n_per_class * k.max(1));
    let classes: Vec<Option<u32>> = if k == 0 { vec![None] } else { (0..k as u32).map(Some).collect() };
    for (ci, class) in classes.into_iter().enumerate() {
        let base = seed.wrapping_add((ci * n_per_class) as u64);
        let seeds: Vec<u64> = (0..n_per_class as u64).map(|i| base.wrapping_add(i)).collect();
        records.extend(generate(checkpoint, &seeds, class)?);
    }
    Ok(package_dataset(&records, out_path)?)
}
