//! GAN-train / GAN-test protocol: small classifiers trained and evaluated
//! under three regimes, reported with macro-averaged metrics.

mod classifiers;
mod metrics;

pub use classifiers::ClassifierSpec;
pub use metrics::{classification_metrics, confusion_matrix, Confusion, Metrics};

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{ImageRecord, Raster};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("confusion matrix has no samples")]
    EmptyConfusion,
    #[error("bad confusion matrix: {0}")]
    BadConfusion(String),
    #[error("class vocabularies differ: {what} has {got:?}, expected {expected:?}")]
    LabelVocabularyMismatch { what: &'static str, expected: Vec<u32>, got: Vec<u32> },
    #[error("regime {0} needs a synthetic set")]
    MissingSyntheticSet(Regime),
    #[error("{0} contains unlabeled images")]
    Unlabeled(&'static str),
    #[error("{0} is empty")]
    EmptySet(&'static str),
    #[error("{what} has resolution {got}, expected {expected}")]
    ResolutionMismatch { what: &'static str, expected: usize, got: usize },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, EvalError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Train real, evaluate real.
    Base,
    /// Train synthetic, evaluate real.
    GanTrain,
    /// Train real, evaluate synthetic.
    GanTest,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Base, Regime::GanTrain, Regime::GanTest];

    pub fn name(self) -> &'static str {
        match self {
            Regime::Base => "base",
            Regime::GanTrain => "gan_train",
            Regime::GanTest => "gan_test",
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassifierReport {
    pub regime: Regime,
    pub classifier_name: String,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Rows = actual class, columns = predicted class.
    pub confusion: Confusion,
    pub n_train: usize,
    pub n_eval: usize,
}

struct Labeled<'a> {
    images: Vec<&'a Raster>,
    labels: Vec<u32>,
}

fn labeled<'a>(records: &'a [ImageRecord], what: &'static str) -> Result<Labeled<'a>> {
    if records.is_empty() {
        return Err(EvalError::EmptySet(what));
    }
    let labels = records.iter().map(|r| r.label.ok_or(EvalError::Unlabeled(what))).collect::<Result<Vec<_>>>()?;
    Ok(Labeled { images: records.iter().map(|r| &r.pixels).collect(), labels })
}

fn vocabulary(labels: &[u32]) -> Vec<u32> {
    labels.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// Train `spec` on the regime's training set and score it on the regime's
/// evaluation set. The base regime never touches `synth_set`.
pub fn run_regime(
    real_train: &[ImageRecord],
    real_eval: &[ImageRecord],
    synth_set: Option<&[ImageRecord]>,
    regime: Regime,
    spec: &ClassifierSpec,
    seed: u64,
) -> Result<ClassifierReport> {
    let real_train_l = labeled(real_train, "real_train")?;
    let real_eval_l = labeled(real_eval, "real_eval")?;
    let vocab = vocabulary(&real_train_l.labels);
    let mut sets = vec![("real_eval", &real_eval_l)];
    let synth_l;
    let (train, eval) = match regime {
        Regime::Base => (&real_train_l, &real_eval_l),
        Regime::GanTrain | Regime::GanTest => {
            let s = synth_set.ok_or(EvalError::MissingSyntheticSet(regime))?;
            synth_l = labeled(s, "synth_set")?;
            sets.push(("synth_set", &synth_l));
            if regime == Regime::GanTrain {
                (&synth_l, &real_eval_l)
            } else {
                (&real_train_l, &synth_l)
            }
        }
    };
    for (what, set) in &sets {
        let v = vocabulary(&set.labels);
        if v != vocab {
            return Err(EvalError::LabelVocabularyMismatch { what, expected: vocab, got: v });
        }
    }
    let res = real_train_l.images[0].width();
    sets.push(("real_train", &real_train_l));
    for (what, set) in &sets {
        if let Some(bad) = set.images.iter().find(|r| r.width() != res || r.height() != res) {
            return Err(EvalError::ResolutionMismatch { what, expected: res, got: bad.width() });
        }
    }

    let k = *vocab.last().expect("nonempty") as usize + 1;
    let k = k.max(2);
    let train_imgs: Vec<Raster> = train.images.iter().map(|&r| r.clone()).collect();
    let eval_imgs: Vec<Raster> = eval.images.iter().map(|&r| r.clone()).collect();
    let predicted = spec.fit_predict(&train_imgs, &train.labels, k, &eval_imgs, seed);
    let confusion = confusion_matrix(&eval.labels, &predicted, k);
    let m = classification_metrics(&confusion)?;
    Ok(ClassifierReport {
        regime,
        classifier_name: spec.name(),
        accuracy: m.accuracy,
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        confusion,
        n_train: train.labels.len(),
        n_eval: eval.labels.len(),
    })
}

/// Every classifier under every regime, classifier-major, regimes in
/// `base, gan_train, gan_test` order. All regimes share `seed`, so a
/// synthetic set equal to the real training set reproduces the base report.
pub fn run_protocol(
    real_train: &[ImageRecord],
    real_eval: &[ImageRecord],
    synth_set: &[ImageRecord],
    specs: &[ClassifierSpec],
    seed: u64,
) -> Result<Vec<ClassifierReport>> {
    let mut out = Vec::with_capacity(specs.len() * 3);
    for spec in specs {
        for regime in Regime::ALL {
            out.push(run_regime(real_train, real_eval, Some(synth_set), regime, spec, seed)?);
        }
    }
    Ok(out)
}

pub const GAN_TRAIN_TEST_HEADER: &str = "classifier,regime,accuracy,precision,recall,f1";

/// Table with metrics as percentages to two decimals.
pub fn gan_train_test_csv(reports: &[ClassifierReport]) -> String {
    let mut s = String::from(GAN_TRAIN_TEST_HEADER);
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{:.2},{:.2},{:.2},{:.2}",
            r.classifier_name,
            r.regime,
            100.0 * r.accuracy,
            100.0 * r.precision,
            100.0 * r.recall,
            100.0 * r.f1
        );
    }
    s
}

pub fn write_gan_train_test(reports: &[ClassifierReport], path: &Path) -> Result<()> {
    crate::corpus::write_atomic(path, gan_train_test_csv(reports).as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::generate_toy_corpus;

    #[test]
    fn dummy_on_balanced_binary_is_half() {
        let recs = generate_toy_corpus(20, 32, 2, 1);
        let r = run_regime(&recs, &recs, None, Regime::Base, &ClassifierSpec::Dummy { class: 0 }, 0).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.confusion, vec![vec![10, 0], vec![10, 0]]);
        assert_eq!(r.confusion.iter().flatten().sum::<u64>() as usize, r.n_eval);
    }

    #[test]
    fn synthetic_regimes_need_a_set() {
        let recs = generate_toy_corpus(4, 32, 2, 1);
        let e = run_regime(&recs, &recs, None, Regime::GanTrain, &ClassifierSpec::logreg(), 0);
        assert!(matches!(e, Err(EvalError::MissingSyntheticSet(Regime::GanTrain))));
    }

    #[test]
    fn vocabulary_mismatch() {
        let two = generate_toy_corpus(10, 32, 2, 1);
        let five = generate_toy_corpus(10, 32, 5, 1);
        let e = run_regime(&two, &two, Some(&five), Regime::GanTest, &ClassifierSpec::logreg(), 0);
        assert!(matches!(e, Err(EvalError::LabelVocabularyMismatch { what: "synth_set", .. })));
    }

    #[test]
    fn csv_layout() {
        let r = ClassifierReport {
            regime: Regime::GanTrain,
            classifier_name: "logreg".into(),
            accuracy: 0.78364,
            precision: 0.5,
            recall: 1.0,
            f1: 2.0 / 3.0,
            confusion: vec![vec![1, 0], vec![0, 1]],
            n_train: 2,
            n_eval: 2,
        };
        assert_eq!(gan_train_test_csv(&[r]), "classifier,regime,accuracy,precision,recall,f1\nlogreg,gan_train,78.36,50.00,100.00,66.67\n");
    }
}
