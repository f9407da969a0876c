//! Adversarial image model: networks, losses with lazy R1, checkpoints,
//! the training loop and FID-based convergence monitoring.

mod checkpoint;
mod hyper;
mod loss;
mod model;
mod networks;
mod train;

pub use checkpoint::TrainingCheckpoint;
pub use hyper::{Hyperparameters, HYPERPARAMETER_NAMES};
pub use loss::{d_loss, d_loss_and_grad, g_loss, g_loss_and_grad, DLoss, GLoss, LatentBatch, R1Config, RealBatch};
pub use model::{Critic, CriticGrad, R1Grad, Synthesizer};
pub use networks::{
    init_networks, ArchConfig, Discriminator, DiscriminatorTrace, Generator, GeneratorTrace, MAX_RESOLUTION,
    MIN_RESOLUTION,
};
pub use train::{train, train_set, TrainOptions, TrainSet};

pub(crate) use train::render;

use thiserror::Error;

use crate::corpus::CorpusError;
use crate::fid::FidError;

#[derive(Debug, Error)]
pub enum GanError {
    #[error("resolution {0} is not a power of two in [32, 256]")]
    UnsupportedResolution(usize),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dataset resolution {dataset} does not match network resolution {network}")]
    ResolutionMismatch { dataset: usize, network: usize },
    #[error("dataset has {dataset} classes, network has {network}")]
    ClassMismatch { dataset: usize, network: usize },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("labels must be present on all records or on none")]
    PartialLabels,
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparameter(String),
    #[error("unknown hyperparameter {0:?}")]
    UnknownHyperparameter(String),
    #[error("training diverged at step {step}")]
    Diverged { step: usize },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Fid(#[from] FidError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, GanError>;

/// True iff the last `window` values exist and `(max - min) / min <= rel_tol`
/// over them.
///
/// # Panics
/// If `window < 2`.
pub fn has_converged(fids: &[f64], window: usize, rel_tol: f64) -> bool {
    assert!(window >= 2, "window must be >= 2");
    if fids.len() < window {
        return false;
    }
    let tail = &fids[fids.len() - window..];
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        return max == min;
    }
    (max - min) / min <= rel_tol
}
