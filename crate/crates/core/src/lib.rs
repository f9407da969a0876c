//! Core of the GIST pipeline: dataset preparation, a compact adversarial
//! image model, synthesis, Fréchet distance metrics, downstream classifier
//! evaluation, experiment sweeps and the stage orchestrator.
//!
//! Every image in this crate is a single-channel raster with intensities in
//! `[0, 1]`. The adversarial model works in `[-1, 1]` internally and the
//! conversion happens at the synthesis and training boundaries.

pub mod corpus;
pub mod eval;
pub mod experiments;
pub mod fid;
pub mod gan;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthesis;

pub use corpus::{DatasetArchive, ImageRecord, Raster};
pub use fid::{FidReport, GaussianMoments};
pub use gan::{Hyperparameters, TrainingCheckpoint};


