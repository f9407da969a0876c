//! Compact DCGAN-style networks.
//!
//! The generator maps `[z, onehot(y)]` through a linear layer to a 4x4 feature
//! map and doubles it with 4x4 transposed convolutions up to the target
//! resolution, ending in `tanh`. The discriminator mirrors it with strided
//! convolutions down to 4x4, flattens to a feature `phi`, and scores
//! `(w + E[y]) . phi + b` (projection conditioning).

use serde::{Deserialize, Serialize};

use super::model::{Critic, CriticGrad, R1Grad, Synthesizer};
use super::{GanError, Result};
use crate::nn::ops::{im2col, leaky, leaky_slope, ConvGeom};
use crate::nn::{he_std, swap_leading, Conv2d, ConvTranspose2d, Linear, Tensor};
use crate::rng::{self, Rng};

pub const MIN_RESOLUTION: usize = 32;
pub const MAX_RESOLUTION: usize = 256;
const BASE: usize = 4;

/// Channel layout shared by both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub resolution: usize,
    pub n_classes: usize,
    pub latent_dim: usize,
    pub width: usize,
    pub max_channels: usize,
}

impl ArchConfig {
    pub fn new(resolution: usize, n_classes: usize, latent_dim: usize, width: usize, max_channels: usize) -> Result<Self> {
        if !(MIN_RESOLUTION..=MAX_RESOLUTION).contains(&resolution) || !resolution.is_power_of_two() {
            return Err(GanError::UnsupportedResolution(resolution));
        }
        Ok(Self { resolution, n_classes, latent_dim, width, max_channels })
    }

    /// Number of resolution-doubling blocks between 4x4 and the image.
    pub fn blocks(&self) -> usize {
        (self.resolution / BASE).trailing_zeros() as usize
    }

    /// Channels at spatial size `4 * 2^level`, for `level in 0..blocks()`.
    pub fn channels(&self, level: usize) -> usize {
        let shift = (self.blocks() - 1 - level).min(usize::BITS as usize - 1) as u32;
        self.width.saturating_mul(1usize.checked_shl(shift).unwrap_or(usize::MAX)).min(self.max_channels)
    }

    pub fn feature_dim(&self) -> usize {
        self.channels(0) * BASE * BASE
    }

    fn side(level: usize) -> usize {
        BASE << level
    }
}

/// Build both networks from `seed`; identical seeds give identical parameters.
pub fn init_networks(arch: ArchConfig, seed: u64) -> Result<(Generator, Discriminator)> {
    ArchConfig::new(arch.resolution, arch.n_classes, arch.latent_dim, arch.width, arch.max_channels)?;
    let mut rg = rng::stream(seed, 0);
    let mut rd = rng::stream(seed, 1);
    Ok((Generator::new(arch, &mut rg), Discriminator::new(arch, &mut rd)))
}

fn check_labels(labels: Option<&[u32]>, n: usize, n_classes: usize) {
    match labels {
        Some(l) => {
            assert!(n_classes > 0, "labels given to an unconditional network");
            assert_eq!(l.len(), n, "label count");
            assert!(l.iter().all(|&c| (c as usize) < n_classes), "label out of range");
        }
        None => assert_eq!(n_classes, 0, "conditional network needs labels"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    arch: ArchConfig,
    fc: Linear,
    up: Vec<ConvTranspose2d>,
}

/// Intermediate values of one generator pass.
#[derive(Debug, Clone)]
pub struct GeneratorTrace {
    n: usize,
    input: Vec<f64>,
    fc_pre: Vec<f64>,
    /// Input to each transposed convolution, `[c, n, h, w]`.
    acts: Vec<Vec<f64>>,
    /// Pre-activation output of each transposed convolution.
    pres: Vec<Vec<f64>>,
    out: Vec<f64>,
}

impl Generator {
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Self {
        let inputs = arch.latent_dim + arch.n_classes;
        let fc = Linear::new(inputs, arch.feature_dim(), he_std(inputs), rng);
        let blocks = arch.blocks();
        let up = (0..blocks)
            .map(|l| {
                let cin = arch.channels(l);
                let cout = if l + 1 == blocks { 1 } else { arch.channels(l + 1) };
                // each output pixel sees 4 taps of every input channel
                ConvTranspose2d::new(cin, cout, he_std(cin * 4), rng)
            })
            .collect();
        Self { arch, fc, up }
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn resolution(&self) -> usize {
        self.arch.resolution
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("generator.fc.weight".to_string(), &self.fc.weight), ("generator.fc.bias".to_string(), &self.fc.bias)];
        for (i, l) in self.up.iter().enumerate() {
            out.push((format!("generator.up{i}.weight"), &l.weight));
            out.push((format!("generator.up{i}.bias"), &l.bias));
        }
        out
    }

    fn input_matrix(&self, z: &[f64], labels: Option<&[u32]>, n: usize) -> Vec<f64> {
        let (ld, k) = (self.arch.latent_dim, self.arch.n_classes);
        assert_eq!(z.len(), n * ld, "latent batch shape");
        check_labels(labels, n, k);
        if k == 0 {
            return z.to_vec();
        }
        let labels = labels.unwrap_or_default();
        let mut x = Vec::with_capacity(n * (ld + k));
        for (row, &y) in z.chunks_exact(ld).zip(labels) {
            x.extend_from_slice(row);
            x.extend((0..k).map(|c| if c == y as usize { 1.0 } else { 0.0 }));
        }
        x
    }
}

impl Synthesizer for Generator {
    type Trace = GeneratorTrace;

    fn latent_dim(&self) -> usize {
        self.arch.latent_dim
    }

    fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn output_len(&self) -> usize {
        self.arch.resolution * self.arch.resolution
    }

    fn synthesize(&self, z: &[f64], labels: Option<&[u32]>, n: usize) -> GeneratorTrace {
        let input = self.input_matrix(z, labels, n);
        let fc_pre = self.fc.forward(&input, n);
        let c0 = self.arch.channels(0);
        let act: Vec<f64> = fc_pre.iter().map(|&v| leaky(v)).collect();
        let mut acts = vec![swap_leading(&act, n, c0, BASE * BASE)];
        let mut pres = Vec::with_capacity(self.up.len());
        let mut out = Vec::new();
        for (l, layer) in self.up.iter().enumerate() {
            let side = ArchConfig::side(l);
            let pre = layer.forward(&acts[l], n, side, side);
            if l + 1 == self.up.len() {
                out = pre.iter().map(|v| v.tanh()).collect();
            } else {
                acts.push(pre.iter().map(|&v| leaky(v)).collect());
            }
            pres.push(pre);
        }
        GeneratorTrace { n, input, fc_pre, acts, pres, out }
    }

    fn output<'t>(&self, trace: &'t GeneratorTrace) -> &'t [f64] {
        &trace.out
    }

    fn backward(&self, t: &GeneratorTrace, dout: &[f64]) -> Vec<Tensor> {
        assert_eq!(dout.len(), t.out.len());
        let n = t.n;
        let mut dy: Vec<f64> = dout.iter().zip(&t.out).map(|(d, o)| d * (1.0 - o * o)).collect();
        let mut conv_grads = Vec::with_capacity(2 * self.up.len());
        for l in (0..self.up.len()).rev() {
            let side = ArchConfig::side(l);
            let (dx, dw, db) = self.up[l].backward(&t.acts[l], &dy, n, side, side);
            conv_grads.push((dw, db));
            dy = if l > 0 {
                dx.iter().zip(&t.pres[l - 1]).map(|(d, &p)| d * leaky_slope(p)).collect()
            } else {
                dx
            };
        }
        let c0 = self.arch.channels(0);
        let dact = swap_leading(&dy, c0, n, BASE * BASE);
        let dpre: Vec<f64> = dact.iter().zip(&t.fc_pre).map(|(d, &p)| d * leaky_slope(p)).collect();
        let (dw, db) = self.fc.backward_params(&t.input, &dpre, n);
        let mut grads = vec![dw, db];
        for (dw, db) in conv_grads.into_iter().rev() {
            grads.push(dw);
            grads.push(db);
        }
        grads
    }

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.fc.weight, &mut self.fc.bias];
        for l in &mut self.up {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    arch: ArchConfig,
    down: Vec<Conv2d>,
    head: Linear,
    /// `[n_classes, feature_dim]` projection embedding; absent when unconditional.
    embed: Option<Tensor>,
}

#[derive(Debug, Clone)]
pub struct DiscriminatorTrace {
    n: usize,
    labels: Option<Vec<u32>>,
    cols: Vec<Vec<f64>>,
    pres: Vec<Vec<f64>>,
    /// `n x feature_dim`, one row per sample.
    phi: Vec<f64>,
    logits: Vec<f64>,
}

impl Discriminator {
    pub fn new(arch: ArchConfig, rng: &mut Rng) -> Self {
        let blocks = arch.blocks();
        // down[0] reads the image and halves it; down[blocks-1] ends at 4x4
        let down = (0..blocks)
            .map(|i| {
                let level_out = blocks - 1 - i;
                let cin = if i == 0 { 1 } else { arch.channels(level_out + 1) };
                Conv2d::new(cin, arch.channels(level_out), rng)
            })
            .collect();
        let fd = arch.feature_dim();
        let head = Linear::new(fd, 1, he_std(fd), rng);
        let embed = (arch.n_classes > 0).then(|| Tensor::randn(&[arch.n_classes, fd], he_std(fd), rng));
        Self { arch, down, head, embed }
    }

    pub fn arch(&self) -> ArchConfig {
        self.arch
    }

    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (i, l) in self.down.iter().enumerate() {
            out.push((format!("discriminator.down{i}.weight"), &l.weight));
            out.push((format!("discriminator.down{i}.bias"), &l.bias));
        }
        out.push(("discriminator.head.weight".to_string(), &self.head.weight));
        out.push(("discriminator.head.bias".to_string(), &self.head.bias));
        if let Some(e) = &self.embed {
            out.push(("discriminator.embed".to_string(), e));
        }
        out
    }

    fn geom(&self, layer: usize, n: usize) -> ConvGeom {
        let side = self.arch.resolution >> layer;
        ConvGeom { channels: self.down[layer].in_channels(), batch: n, height: side, width: side }
    }

    /// `w + E[y_i]` for every sample, `n x feature_dim`.
    fn projection(&self, labels: Option<&[u32]>, n: usize) -> Vec<f64> {
        let w = self.head.weight.data();
        let mut out = Vec::with_capacity(n * w.len());
        for i in 0..n {
            match (&self.embed, labels) {
                (Some(e), Some(l)) => {
                    let row = &e.data()[l[i] as usize * w.len()..][..w.len()];
                    out.extend(w.iter().zip(row).map(|(a, b)| a + b));
                }
                _ => out.extend_from_slice(w),
            }
        }
        out
    }

    /// Backward pass through the convolution stack from `dphi`. Returns the
    /// per-layer pre-activation gradients and, if asked, the input gradient.
    fn backward_stack(&self, t: &DiscriminatorTrace, dphi: &[f64], want_input: bool) -> (Vec<Vec<f64>>, Vec<f64>) {
        let n = t.n;
        let c0 = self.arch.channels(0);
        let mut da = swap_leading(dphi, n, c0, BASE * BASE);
        let mut dhs = vec![Vec::new(); self.down.len()];
        let mut dx = Vec::new();
        for l in (0..self.down.len()).rev() {
            let dh: Vec<f64> = da.iter().zip(&t.pres[l]).map(|(d, &p)| d * leaky_slope(p)).collect();
            if l > 0 || want_input {
                let prev = self.down[l].backward_input(&dh, self.geom(l, n));
                if l == 0 {
                    dx = prev;
                } else {
                    da = prev;
                }
            }
            dhs[l] = dh;
        }
        (dhs, dx)
    }

    fn head_grads(&self, t: &DiscriminatorTrace, coef: &[f64], phi: &[f64]) -> Vec<Tensor> {
        let fd = self.arch.feature_dim();
        let mut dw = vec![0.0; fd];
        for (row, &c) in phi.chunks_exact(fd).zip(coef) {
            for (g, v) in dw.iter_mut().zip(row) {
                *g += c * v;
            }
        }
        let mut out = vec![Tensor::from_vec(&[1, fd], dw)];
        out.push(Tensor::from_vec(&[1], vec![0.0]));
        if let Some(e) = &self.embed {
            let mut de = Tensor::zeros(e.shape());
            let labels = t.labels.as_deref().expect("conditional trace has labels");
            for ((row, &c), &y) in phi.chunks_exact(fd).zip(coef).zip(labels) {
                let dst = &mut de.data_mut()[y as usize * fd..][..fd];
                for (g, v) in dst.iter_mut().zip(row) {
                    *g += c * v;
                }
            }
            out.push(de);
        }
        out
    }
}

impl Critic for Discriminator {
    type Trace = DiscriminatorTrace;

    fn input_len(&self) -> usize {
        self.arch.resolution * self.arch.resolution
    }

    fn n_classes(&self) -> usize {
        self.arch.n_classes
    }

    fn forward(&self, images: &[f64], labels: Option<&[u32]>, n: usize) -> DiscriminatorTrace {
        assert_eq!(images.len(), n * self.input_len(), "image batch shape");
        check_labels(labels, n, self.arch.n_classes);
        // a [n, r*r] batch is already [1, n, r, r]
        let mut a = images.to_vec();
        let mut cols = Vec::with_capacity(self.down.len());
        let mut pres = Vec::with_capacity(self.down.len());
        for (l, conv) in self.down.iter().enumerate() {
            let (pre, c) = conv.forward(&a, self.geom(l, n));
            a = pre.iter().map(|&v| leaky(v)).collect();
            cols.push(c);
            pres.push(pre);
        }
        let fd = self.arch.feature_dim();
        let phi = swap_leading(&a, self.arch.channels(0), n, BASE * BASE);
        let proj = self.projection(labels, n);
        let b = self.head.bias.data()[0];
        let logits = phi
            .chunks_exact(fd)
            .zip(proj.chunks_exact(fd))
            .map(|(p, w)| p.iter().zip(w).map(|(x, y)| x * y).sum::<f64>() + b)
            .collect();
        DiscriminatorTrace { n, labels: labels.map(<[u32]>::to_vec), cols, pres, phi, logits }
    }

    fn logits<'t>(&self, trace: &'t DiscriminatorTrace) -> &'t [f64] {
        &trace.logits
    }

    fn backward(&self, t: &DiscriminatorTrace, dlogits: &[f64], want_params: bool, want_input: bool) -> CriticGrad {
        assert_eq!(dlogits.len(), t.n);
        let fd = self.arch.feature_dim();
        let proj = self.projection(t.labels.as_deref(), t.n);
        let dphi: Vec<f64> =
            proj.chunks_exact(fd).zip(dlogits).flat_map(|(w, &d)| w.iter().map(move |v| v * d)).collect();
        let (dhs, input) = self.backward_stack(t, &dphi, want_input);
        let mut params = Vec::new();
        if want_params {
            for (l, conv) in self.down.iter().enumerate() {
                params.push(conv.grad_weight(&dhs[l], &t.cols[l], self.geom(l, t.n)));
                params.push(conv.grad_bias(&dhs[l]));
            }
            let mut head = self.head_grads(t, dlogits, &t.phi);
            head[1] = Tensor::from_vec(&[1], vec![dlogits.iter().sum()]);
            params.extend(head);
        }
        CriticGrad { params, input }
    }

    /// Forward-over-reverse: with `g = grad_x sum(logits)` held fixed, the
    /// parameter gradient of `0.5 |g|^2` equals the parameter gradient of the
    /// directional derivative of `sum(logits)` along `g`. The network is
    /// piecewise linear, so that derivative is a second pass of the same linear
    /// maps with frozen activation slopes, and its backward deltas coincide
    /// with those of the first backward pass.
    fn r1(&self, t: &DiscriminatorTrace) -> R1Grad {
        let n = t.n;
        let fd = self.arch.feature_dim();
        let proj = self.projection(t.labels.as_deref(), n);
        let (dhs, g) = self.backward_stack(t, &proj, true);
        let per = self.input_len();
        let sq_norms = g.chunks_exact(per).map(|r| r.iter().map(|v| v * v).sum()).collect();

        let mut params = Vec::with_capacity(2 * self.down.len() + 3);
        let mut a_t = g;
        for (l, conv) in self.down.iter().enumerate() {
            let geom = self.geom(l, n);
            let cols_t = im2col(&a_t, geom);
            let h_t = conv.apply(&cols_t, geom, false);
            params.push(conv.grad_weight(&dhs[l], &cols_t, geom));
            params.push(Tensor::zeros(conv.bias.shape()));
            a_t = h_t.iter().zip(&t.pres[l]).map(|(v, &p)| v * leaky_slope(p)).collect();
        }
        let phi_t = swap_leading(&a_t, self.arch.channels(0), n, BASE * BASE);
        debug_assert_eq!(phi_t.len(), n * fd);
        params.extend(self.head_grads(t, &vec![1.0; n], &phi_t));
        R1Grad { sq_norms, params }
    }

    fn params(&self) -> Vec<&Tensor> {
        self.named_params().into_iter().map(|(_, t)| t).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.down {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        if let Some(e) = &mut self.embed {
            out.push(e);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn arch(res: usize, k: usize) -> ArchConfig {
        ArchConfig::new(res, k, 8, 4, 16).unwrap()
    }

    #[test]
    fn resolution_bounds() {
        for r in [16, 48, 512] {
            assert!(matches!(ArchConfig::new(r, 0, 8, 4, 16), Err(GanError::UnsupportedResolution(x)) if x == r));
        }
        for r in [32, 64, 128, 256] {
            assert!(ArchConfig::new(r, 0, 8, 4, 16).is_ok());
        }
    }

    #[test]
    fn channel_layout() {
        let a = ArchConfig::new(64, 0, 8, 8, 32).unwrap();
        assert_eq!(a.blocks(), 4);
        assert_eq!((0..4).map(|l| a.channels(l)).collect::<Vec<_>>(), vec![32, 32, 16, 8]);
    }

    #[test]
    fn same_seed_same_parameters() {
        let (g1, d1) = init_networks(arch(32, 2), 1).unwrap();
        let (g2, d2) = init_networks(arch(32, 2), 1).unwrap();
        assert_eq!((g1.clone(), d1.clone()), (g2, d2));
        let (g3, _) = init_networks(arch(32, 2), 2).unwrap();
        assert_ne!(g1, g3);
    }

    #[test]
    fn output_shapes() {
        let (g, d) = init_networks(arch(32, 0), 1).unwrap();
        let z = vec![0.3; 4 * 8];
        let t = g.synthesize(&z, None, 4);
        assert_eq!(g.output(&t).len(), 4 * 32 * 32);
        assert!(g.output(&t).iter().all(|v| (-1.0..=1.0).contains(v)));
        let dt = d.forward(g.output(&t), None, 4);
        assert_eq!(d.logits(&dt).len(), 4);
    }

    #[test]
    fn batch_composition_does_not_change_samples() {
        let (g, d) = init_networks(arch(32, 3), 5).unwrap();
        let mut r = rng::seeded(2);
        let z = Tensor::randn(&[3, 8], 1.0, &mut r);
        let both = g.synthesize(z.data(), Some(&[0, 2, 1]), 3);
        let one = g.synthesize(&z.data()[8..16], Some(&[2]), 1);
        let per = 32 * 32;
        for (a, b) in g.output(&both)[per..2 * per].iter().zip(g.output(&one)) {
            assert!((a - b).abs() < 1e-12);
        }
        let lb = d.forward(g.output(&both), Some(&[0, 2, 1]), 3);
        let l1 = d.forward(g.output(&one), Some(&[2]), 1);
        assert!((d.logits(&lb)[1] - d.logits(&l1)[0]).abs() < 1e-12);
    }
}
