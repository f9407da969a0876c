//! The two network roles as traits, so the losses and the training loop can
//! run against small hand-written models in tests.

use crate::nn::Tensor;

/// Gradients of `sum_i dlogits[i] * logit_i`.
#[derive(Debug, Clone, Default)]
pub struct CriticGrad {
    /// Same order as [`Critic::params`]; empty unless requested.
    pub params: Vec<Tensor>,
    /// `n x input_len`; empty unless requested.
    pub input: Vec<f64>,
}

/// Gradient information for the R1 penalty at a batch of inputs.
#[derive(Debug, Clone)]
pub struct R1Grad {
    /// `|grad_x logit_i|^2` per sample.
    pub sq_norms: Vec<f64>,
    /// Gradient of `0.5 * sum_i |grad_x logit_i|^2` with respect to the parameters.
    pub params: Vec<Tensor>,
}

/// Maps a batch of images (and optional class labels) to one logit each.
pub trait Critic {
    type Trace;

    /// Values per input image.
    fn input_len(&self) -> usize;
    fn n_classes(&self) -> usize;
    fn forward(&self, images: &[f64], labels: Option<&[u32]>, n: usize) -> Self::Trace;
    fn logits<'t>(&self, trace: &'t Self::Trace) -> &'t [f64];
    fn backward(&self, trace: &Self::Trace, dlogits: &[f64], want_params: bool, want_input: bool) -> CriticGrad;
    fn r1(&self, trace: &Self::Trace) -> R1Grad;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}

/// Maps latent vectors (and optional class labels) to images in `[-1, 1]`.
pub trait Synthesizer {
    type Trace;

    fn latent_dim(&self) -> usize;
    fn n_classes(&self) -> usize;
    /// Values per output image.
    fn output_len(&self) -> usize;
    fn synthesize(&self, z: &[f64], labels: Option<&[u32]>, n: usize) -> Self::Trace;
    fn output<'t>(&self, trace: &'t Self::Trace) -> &'t [f64];
    /// Parameter gradients of `sum(dout * output)`, in [`Synthesizer::params`] order.
    fn backward(&self, trace: &Self::Trace, dout: &[f64]) -> Vec<Tensor>;
    fn params(&self) -> Vec<&Tensor>;
    fn params_mut(&mut self) -> Vec<&mut Tensor>;
}
