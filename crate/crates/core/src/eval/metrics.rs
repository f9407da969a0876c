use serde::Serialize;

use super::{EvalError, Result};

/// Macro-averaged classification metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `K x K` counts, rows = actual class, columns = predicted class.
pub type Confusion = Vec<Vec<u64>>;

pub fn confusion_matrix(actual: &[u32], predicted: &[u32], k: usize) -> Confusion {
    assert_eq!(actual.len(), predicted.len());
    let mut m = vec![vec![0u64; k]; k];
    for (&a, &p) in actual.iter().zip(predicted) {
        m[a as usize][p as usize] += 1;
    }
    m
}

/// Accuracy plus macro precision, recall and F1. A class with no predicted
/// (resp. actual) samples contributes 0 to precision (resp. recall), and F1
/// is 0 where precision + recall is 0.
pub fn classification_metrics(confusion: &[Vec<u64>]) -> Result<Metrics> {
    let k = confusion.len();
    if k < 2 || confusion.iter().any(|r| r.len() != k) {
        return Err(EvalError::BadConfusion(format!("need a square matrix with K >= 2, got {k} rows")));
    }
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return Err(EvalError::EmptyConfusion);
    }
    let ratio = |num: u64, den: u64| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let (mut p_sum, mut r_sum, mut f_sum, mut trace) = (0.0, 0.0, 0.0, 0);
    for c in 0..k {
        let tp = confusion[c][c];
        let predicted: u64 = confusion.iter().map(|r| r[c]).sum();
        let actual: u64 = confusion[c].iter().sum();
        let p = ratio(tp, predicted);
        let r = ratio(tp, actual);
        p_sum += p;
        r_sum += r;
        f_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        trace += tp;
    }
    let kf = k as f64;
    Ok(Metrics { accuracy: ratio(trace, total), precision: p_sum / kf, recall: r_sum / kf, f1: f_sum / kf })
}
