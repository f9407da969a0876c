//! Non-saturating logistic losses with a lazy R1 penalty.

use rand_distr::{Distribution, StandardNormal};

use super::model::{Critic, Synthesizer};
use super::{GanError, Result};
use crate::nn::ops::{sigmoid, softplus};
use crate::nn::Tensor;
use crate::rng::Rng;

/// Latent vectors, row-major `n x dim`, with the classes to condition on.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentBatch {
    pub z: Vec<f64>,
    pub n: usize,
    pub dim: usize,
    pub labels: Option<Vec<u32>>,
}

impl LatentBatch {
    /// i.i.d. standard normal draws.
    pub fn sample(n: usize, dim: usize, labels: Option<Vec<u32>>, rng: &mut Rng) -> Self {
        let z = (0..n * dim).map(|_| StandardNormal.sample(rng)).collect();
        Self { z, n, dim, labels }
    }
}

/// Real images in `[-1, 1]`, row-major `n x pixels`.
#[derive(Debug, Clone, PartialEq)]
pub struct RealBatch {
    pub images: Vec<f64>,
    pub n: usize,
    pub labels: Option<Vec<u32>>,
}

/// R1 weight and the lazy-regularization interval it is compensated for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct R1Config {
    pub gamma: f64,
    pub interval: usize,
}

#[derive(Debug, Clone)]
pub struct DLoss {
    pub total: f64,
    /// Penalty term as added to `total`; `None` when R1 was not applied.
    pub r1_penalty: Option<f64>,
    /// Discriminator parameter gradients.
    pub grads: Vec<Tensor>,
}

#[derive(Debug, Clone)]
pub struct GLoss {
    pub total: f64,
    /// Generator parameter gradients.
    pub grads: Vec<Tensor>,
}

fn check_conditioning(labels: Option<&[u32]>, n: usize, n_classes: usize, what: &str) -> Result<()> {
    match labels {
        None if n_classes == 0 => Ok(()),
        Some(l) if n_classes > 0 && l.len() == n && l.iter().all(|&c| (c as usize) < n_classes) => Ok(()),
        _ => Err(GanError::ShapeMismatch(format!("{what} labels do not match {n_classes} classes and batch {n}"))),
    }
}

fn check_latents<G: Synthesizer>(g: &G, z: &LatentBatch) -> Result<()> {
    if z.dim != g.latent_dim() || z.z.len() != z.n * z.dim {
        return Err(GanError::ShapeMismatch(format!(
            "latent batch {}x{} for latent_dim {}",
            z.n,
            z.dim,
            g.latent_dim()
        )));
    }
    check_conditioning(z.labels.as_deref(), z.n, g.n_classes(), "latent")
}

/// Discriminator loss
/// `mean softplus(D(G(z))) + mean softplus(-D(x)) [+ gamma/2 * mean |grad_x D(x)|^2 * interval]`
/// and its gradient with respect to the discriminator parameters only.
pub fn d_loss_and_grad<D: Critic, G: Synthesizer>(
    d: &D,
    g: &G,
    real: &RealBatch,
    z: &LatentBatch,
    r1: R1Config,
    apply_r1: bool,
) -> Result<DLoss> {
    check_latents(g, z)?;
    if g.output_len() != d.input_len() || real.images.len() != real.n * d.input_len() || real.n != z.n || real.n == 0 {
        return Err(GanError::ShapeMismatch(format!(
            "real batch of {} images ({} values) vs generated batch of {} at {} values per image",
            real.n,
            real.images.len(),
            z.n,
            d.input_len()
        )));
    }
    check_conditioning(real.labels.as_deref(), real.n, d.n_classes(), "real")?;
    let n = real.n as f64;

    let fake_t = g.synthesize(&z.z, z.labels.as_deref(), z.n);
    let fake = d.forward(g.output(&fake_t), z.labels.as_deref(), z.n);
    let real_t = d.forward(&real.images, real.labels.as_deref(), real.n);

    let lf = d.logits(&fake);
    let lr = d.logits(&real_t);
    let mut total = lf.iter().map(|&l| softplus(l)).sum::<f64>() / n + lr.iter().map(|&l| softplus(-l)).sum::<f64>() / n;

    let dfake: Vec<f64> = lf.iter().map(|&l| sigmoid(l) / n).collect();
    let dreal: Vec<f64> = lr.iter().map(|&l| -sigmoid(-l) / n).collect();
    let mut grads = d.backward(&fake, &dfake, true, false).params;
    for (acc, gr) in grads.iter_mut().zip(d.backward(&real_t, &dreal, true, false).params) {
        acc.add_assign(&gr);
    }

    let mut r1_penalty = None;
    if apply_r1 {
        let scale = r1.gamma * r1.interval as f64;
        let rg = d.r1(&real_t);
        let penalty = scale * 0.5 * rg.sq_norms.iter().sum::<f64>() / n;
        total += penalty;
        for (acc, gr) in grads.iter_mut().zip(&rg.params) {
            acc.axpy(scale / n, gr);
        }
        r1_penalty = Some(penalty);
    }
    Ok(DLoss { total, r1_penalty, grads })
}

/// Value of [`d_loss_and_grad`].
pub fn d_loss<D: Critic, G: Synthesizer>(
    d: &D,
    g: &G,
    real: &RealBatch,
    z: &LatentBatch,
    r1: R1Config,
    apply_r1: bool,
) -> Result<f64> {
    Ok(d_loss_and_grad(d, g, real, z, r1, apply_r1)?.total)
}

/// Generator loss `mean softplus(-D(G(z)))` and its gradient with respect to
/// the generator parameters only.
pub fn g_loss_and_grad<D: Critic, G: Synthesizer>(d: &D, g: &G, z: &LatentBatch) -> Result<GLoss> {
    check_latents(g, z)?;
    if g.output_len() != d.input_len() || z.n == 0 {
        return Err(GanError::ShapeMismatch(format!(
            "generator emits {} values per image, discriminator reads {}",
            g.output_len(),
            d.input_len()
        )));
    }
    let n = z.n as f64;
    let gt = g.synthesize(&z.z, z.labels.as_deref(), z.n);
    let dt = d.forward(g.output(&gt), z.labels.as_deref(), z.n);
    let logits = d.logits(&dt);
    let total = logits.iter().map(|&l| softplus(-l)).sum::<f64>() / n;
    let dl: Vec<f64> = logits.iter().map(|&l| -sigmoid(-l) / n).collect();
    let dx = d.backward(&dt, &dl, false, true).input;
    let grads = g.backward(&gt, &dx);
    Ok(GLoss { total, grads })
}

pub fn g_loss<D: Critic, G: Synthesizer>(d: &D, g: &G, z: &LatentBatch) -> Result<f64> {
    Ok(g_loss_and_grad(d, g, z)?.total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::model::{CriticGrad, R1Grad};
    use crate::gan::networks::{init_networks, ArchConfig};
    use crate::rng;

    const LN2: f64 = std::f64::consts::LN_2;

    /// `D(x) = theta * sum(x)`.
    struct LinearCritic {
        theta: Tensor,
        pixels: usize,
    }

    impl Critic for LinearCritic {
        type Trace = (Vec<f64>, Vec<f64>);

        fn input_len(&self) -> usize {
            self.pixels
        }
        fn n_classes(&self) -> usize {
            0
        }
        fn forward(&self, images: &[f64], _labels: Option<&[u32]>, _n: usize) -> Self::Trace {
            let sums: Vec<f64> = images.chunks_exact(self.pixels).map(|r| r.iter().sum()).collect();
            let logits = sums.iter().map(|s| self.theta.data()[0] * s).collect();
            (sums, logits)
        }
        fn logits<'t>(&self, t: &'t Self::Trace) -> &'t [f64] {
            &t.1
        }
        fn backward(&self, t: &Self::Trace, dl: &[f64], want_params: bool, want_input: bool) -> CriticGrad {
            let th = self.theta.data()[0];
            CriticGrad {
                params: if want_params {
                    vec![Tensor::from_vec(&[1], vec![dl.iter().zip(&t.0).map(|(a, b)| a * b).sum()])]
                } else {
                    vec![]
                },
                input: if want_input {
                    dl.iter().flat_map(|&d| std::iter::repeat_n(d * th, self.pixels)).collect()
                } else {
                    vec![]
                },
            }
        }
        fn r1(&self, t: &Self::Trace) -> R1Grad {
            let th = self.theta.data()[0];
            let n = t.0.len();
            // |grad|^2 = theta^2 * pixels; d/dtheta of 0.5 * sum = n * theta * pixels
            R1Grad {
                sq_norms: vec![th * th * self.pixels as f64; n],
                params: vec![Tensor::from_vec(&[1], vec![n as f64 * th * self.pixels as f64])],
            }
        }
        fn params(&self) -> Vec<&Tensor> {
            vec![&self.theta]
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.theta]
        }
    }

    /// `G(z)` repeats `tanh(a * z_0)` across all pixels.
    struct ScalarSynth {
        a: Tensor,
        pixels: usize,
    }

    impl Synthesizer for ScalarSynth {
        type Trace = (Vec<f64>, Vec<f64>);

        fn latent_dim(&self) -> usize {
            1
        }
        fn n_classes(&self) -> usize {
            0
        }
        fn output_len(&self) -> usize {
            self.pixels
        }
        fn synthesize(&self, z: &[f64], _labels: Option<&[u32]>, _n: usize) -> Self::Trace {
            let out = z.iter().flat_map(|&v| std::iter::repeat_n((self.a.data()[0] * v).tanh(), self.pixels)).collect();
            (z.to_vec(), out)
        }
        fn output<'t>(&self, t: &'t Self::Trace) -> &'t [f64] {
            &t.1
        }
        fn backward(&self, t: &Self::Trace, dout: &[f64]) -> Vec<Tensor> {
            let mut g = 0.0;
            for (i, &z) in t.0.iter().enumerate() {
                let y = t.1[i * self.pixels];
                let s: f64 = dout[i * self.pixels..][..self.pixels].iter().sum();
                g += s * (1.0 - y * y) * z;
            }
            vec![Tensor::from_vec(&[1], vec![g])]
        }
        fn params(&self) -> Vec<&Tensor> {
            vec![&self.a]
        }
        fn params_mut(&mut self) -> Vec<&mut Tensor> {
            vec![&mut self.a]
        }
    }

    fn toy(theta: f64) -> (LinearCritic, ScalarSynth, RealBatch, LatentBatch) {
        let d = LinearCritic { theta: Tensor::from_vec(&[1], vec![theta]), pixels: 3 };
        let g = ScalarSynth { a: Tensor::from_vec(&[1], vec![0.7]), pixels: 3 };
        let real = RealBatch { images: vec![0.2, -0.1, 0.4, -0.5, 0.3, 0.9], n: 2, labels: None };
        let z = LatentBatch { z: vec![0.5, -1.2], n: 2, dim: 1, labels: None };
        (d, g, real, z)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
    }

    #[test]
    fn constant_zero_critic() {
        let (_, g, real, z) = toy(0.0);
        let d = toy(0.0).0;
        let r1 = R1Config { gamma: 0.0, interval: 16 };
        assert!((d_loss(&d, &g, &real, &z, r1, false).unwrap() - 2.0 * LN2).abs() < 1e-12);
        assert!((g_loss(&d, &g, &z).unwrap() - LN2).abs() < 1e-12);
        // the penalty vanishes for a constant critic whatever gamma is
        let with = d_loss(&d, &g, &real, &z, R1Config { gamma: 10.0, interval: 16 }, true).unwrap();
        assert_eq!(with, d_loss(&d, &g, &real, &z, r1, false).unwrap());
    }

    #[test]
    fn g_loss_vanishes_for_confident_critic() {
        let (mut d, g, _, z) = toy(0.0);
        d.pixels = 3;
        // outputs are tanh(0.35) > 0 and tanh(-0.84) < 0; use one positive sample
        let z = LatentBatch { z: vec![0.5], n: 1, ..z };
        d.theta = Tensor::from_vec(&[1], vec![1e4]);
        assert!(g_loss(&d, &g, &z).unwrap() < 1e-100);
    }

    #[test]
    fn toy_critic_gradient_matches_finite_differences() {
        let r1 = R1Config { gamma: 0.8, interval: 4 };
        for apply in [false, true] {
            let (mut d, g, real, z) = toy(0.3);
            let analytic = d_loss_and_grad(&d, &g, &real, &z, r1, apply).unwrap().grads[0].data()[0];
            let h = 1e-5;
            d.theta.data_mut()[0] = 0.3 + h;
            let up = d_loss(&d, &g, &real, &z, r1, apply).unwrap();
            d.theta.data_mut()[0] = 0.3 - h;
            let down = d_loss(&d, &g, &real, &z, r1, apply).unwrap();
            assert!(rel_err(analytic, (up - down) / (2.0 * h)) < 1e-4, "apply_r1={apply}");
        }
    }

    #[test]
    fn toy_generator_gradient_matches_finite_differences() {
        let (d, mut g, _, z) = toy(0.3);
        let analytic = g_loss_and_grad(&d, &g, &z).unwrap().grads[0].data()[0];
        let h = 1e-5;
        g.a.data_mut()[0] = 0.7 + h;
        let up = g_loss(&d, &g, &z).unwrap();
        g.a.data_mut()[0] = 0.7 - h;
        let down = g_loss(&d, &g, &z).unwrap();
        assert!(rel_err(analytic, (up - down) / (2.0 * h)) < 1e-4);
    }

    #[test]
    fn gamma_zero_leaves_only_softplus_terms() {
        let (g, d) = init_networks(ArchConfig::new(32, 0, 4, 2, 4).unwrap(), 3).unwrap();
        let mut r = rng::seeded(1);
        let z = LatentBatch::sample(3, 4, None, &mut r);
        let real = RealBatch { images: Tensor::randn(&[3 * 1024], 0.5, &mut r).into_data(), n: 3, labels: None };
        let r1 = R1Config { gamma: 0.0, interval: 16 };
        let a = d_loss_and_grad(&d, &g, &real, &z, r1, true).unwrap();
        let b = d_loss_and_grad(&d, &g, &real, &z, r1, false).unwrap();
        assert_eq!(a.total, b.total);
        assert_eq!(a.r1_penalty, Some(0.0));
    }

    #[test]
    fn shape_mismatch() {
        let (d, g, real, z) = toy(0.1);
        let short = LatentBatch { z: vec![0.1], n: 1, dim: 1, labels: None };
        let r1 = R1Config { gamma: 1.0, interval: 1 };
        assert!(matches!(d_loss(&d, &g, &real, &short, r1, false), Err(GanError::ShapeMismatch(_))));
        let bad = LatentBatch { dim: 2, ..z.clone() };
        assert!(matches!(g_loss(&d, &g, &bad), Err(GanError::ShapeMismatch(_))));
        let labelled = RealBatch { labels: Some(vec![0, 0]), ..real };
        assert!(matches!(d_loss(&d, &g, &labelled, &z, r1, false), Err(GanError::ShapeMismatch(_))));
    }
}
