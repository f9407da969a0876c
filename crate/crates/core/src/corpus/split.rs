use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{CorpusError, ImageRecord, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub test_fraction: f64,
    pub seed: u64,
}

/// Deterministic train/test split.
///
/// Labeled corpora are split per class (each class contributes
/// `round(fraction * class_size)` test items, remainder to train); unlabeled
/// corpora contribute `round(fraction * n)` test items, clamped so neither
/// side is empty. Both outputs keep the input order.
pub fn split_dataset(
    records: &[ImageRecord],
    spec: SplitSpec,
) -> Result<(Vec<ImageRecord>, Vec<ImageRecord>)> {
    let labels: Vec<Option<u32>> = records.iter().map(|r| r.label).collect();
    let is_test = split_mask(&labels, spec)?;
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (rec, &t) in records.iter().zip(&is_test) {
        if t {
            test.push(rec.clone());
        } else {
            train.push(rec.clone());
        }
    }
    Ok((train, test))
}

/// `true` marks a test item.
pub fn split_mask(labels: &[Option<u32>], spec: SplitSpec) -> Result<Vec<bool>> {
    if !(spec.test_fraction > 0.0 && spec.test_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(spec.test_fraction));
    }
    let n = labels.len();
    if n < 2 {
        return Err(CorpusError::TooFewRecords { needed: 2, got: n });
    }
    let mut rng = rng::seeded(spec.seed);
    let mut mask = vec![false; n];
    if labels.iter().all(Option::is_some) {
        let mut by_class: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for (i, l) in labels.iter().enumerate() {
            by_class.entry(l.unwrap()).or_default().push(i);
        }
        for idx in by_class.values_mut() {
            idx.shuffle(&mut rng);
            let k = (spec.test_fraction * idx.len() as f64).round() as usize;
            for &i in &idx[..k] {
                mask[i] = true;
            }
        }
    } else {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.shuffle(&mut rng);
        let k = ((spec.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
        for &i in &idx[..k] {
            mask[i] = true;
        }
    }
    Ok(mask)
}

/// Keep only records whose label is in `keep`, relabelled to their position
/// in `keep` (so `[0, 3]` maps class 0 to 0 and class 3 to 1).
pub fn filter_labels(records: &[ImageRecord], keep: &[u32]) -> Vec<ImageRecord> {
    records
        .iter()
        .filter_map(|r| {
            let l = r.label?;
            let pos = keep.iter().position(|&k| k == l)?;
            Some(ImageRecord { label: Some(pos as u32), ..r.clone() })
        })
        .collect()
}
