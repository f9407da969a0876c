//! Desk-scale classifiers for the downstream protocol.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::corpus::Raster;
use crate::fid::{desk_extractor, FeatureExtractor};
use crate::nn::ops::{leaky, leaky_slope, ConvGeom};
use crate::nn::{he_std, swap_leading, Adam, AdamConfig, Conv2d, Linear, Tensor};
use crate::rng::{self, Rng};

/// Which classifier to train, with its training schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClassifierSpec {
    /// Softmax regression on standardized desk-extractor features.
    Logreg {
        #[serde(default = "default_logreg_epochs")]
        epochs: usize,
        #[serde(default = "default_logreg_lr")]
        lr: f64,
        #[serde(default = "default_l2")]
        l2: f64,
    },
    /// Two strided 4x4 convolutions (8 and 16 channels) and a linear read-out.
    Convnet {
        #[serde(default = "default_convnet_epochs")]
        epochs: usize,
        #[serde(default = "default_convnet_lr")]
        lr: f64,
        #[serde(default = "default_batch")]
        batch_size: usize,
    },
    /// Always predicts `class`.
    Dummy {
        #[serde(default)]
        class: u32,
    },
}

fn default_logreg_epochs() -> usize {
    300
}
fn default_logreg_lr() -> f64 {
    0.05
}
fn default_l2() -> f64 {
    1e-3
}
fn default_convnet_epochs() -> usize {
    8
}
fn default_convnet_lr() -> f64 {
    2e-3
}
fn default_batch() -> usize {
    32
}

impl ClassifierSpec {
    pub fn logreg() -> Self {
        Self::Logreg { epochs: default_logreg_epochs(), lr: default_logreg_lr(), l2: default_l2() }
    }

    pub fn convnet() -> Self {
        Self::Convnet { epochs: default_convnet_epochs(), lr: default_convnet_lr(), batch_size: default_batch() }
    }

    pub fn name(&self) -> String {
        match self {
            Self::Logreg { .. } => "logreg".into(),
            Self::Convnet { .. } => "convnet".into(),
            Self::Dummy { class } => format!("dummy{class}"),
        }
    }

    /// Train on `(images, labels)` with `k` classes and return predictions for `eval`.
    pub fn fit_predict(&self, images: &[Raster], labels: &[u32], k: usize, eval: &[Raster], seed: u64) -> Vec<u32> {
        match *self {
            Self::Logreg { epochs, lr, l2 } => {
                let m = LogReg::fit(images, labels, k, epochs, lr, l2);
                m.predict(eval)
            }
            Self::Convnet { epochs, lr, batch_size } => {
                let m = ConvNet::fit(images, labels, k, epochs, lr, batch_size.max(1), &mut rng::stream(seed, 0));
                m.predict(eval)
            }
            Self::Dummy { class } => vec![class; eval.len()],
        }
    }
}

fn argmax(row: &[f64]) -> u32 {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best as u32
}

/// In-place softmax of each row; returns the summed cross-entropy.
fn softmax_rows(logits: &mut [f64], k: usize, labels: Option<&[u32]>) -> f64 {
    let mut loss = 0.0;
    for (i, row) in logits.chunks_exact_mut(k).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
        if let Some(l) = labels {
            loss -= row[l[i] as usize].max(1e-300).ln();
        }
    }
    loss
}

struct LogReg {
    extractor: crate::fid::DeskExtractor,
    mean: Vec<f64>,
    scale: Vec<f64>,
    linear: Linear,
    k: usize,
}

impl LogReg {
    fn features(&self, images: &[Raster]) -> Vec<f64> {
        let mut out = Vec::with_capacity(images.len() * self.mean.len());
        for img in images {
            let f = self.extractor.extract(img);
            out.extend(f.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) * s));
        }
        out
    }

    fn fit(images: &[Raster], labels: &[u32], k: usize, epochs: usize, lr: f64, l2: f64) -> Self {
        let extractor = desk_extractor(images.first().map_or(0, |r| r.width()));
        let dim = extractor.dim();
        let n = images.len();
        let raw: Vec<Vec<f64>> = images.iter().map(|r| extractor.extract(r)).collect();
        let mean: Vec<f64> = (0..dim).map(|j| raw.iter().map(|f| f[j]).sum::<f64>() / n as f64).collect();
        let scale: Vec<f64> = (0..dim)
            .map(|j| {
                let var = raw.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f64>() / n as f64;
                if var > 1e-12 {
                    1.0 / var.sqrt()
                } else {
                    0.0
                }
            })
            .collect();
        let mut m = Self {
            extractor,
            mean,
            scale,
            linear: Linear { weight: Tensor::zeros(&[k, dim]), bias: Tensor::zeros(&[k]) },
            k,
        };
        let x = m.features(images);
        let mut adam = Adam::new(AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        for _ in 0..epochs {
            let mut p = m.linear.forward(&x, n);
            softmax_rows(&mut p, k, None);
            for (i, row) in p.chunks_exact_mut(k).enumerate() {
                row[labels[i] as usize] -= 1.0;
                for v in row.iter_mut() {
                    *v /= n as f64;
                }
            }
            let (mut dw, db) = m.linear.backward_params(&x, &p, n);
            dw.axpy(l2, &m.linear.weight);
            adam.step(vec![&mut m.linear.weight, &mut m.linear.bias], &[dw, db]);
        }
        m
    }

    fn predict(&self, images: &[Raster]) -> Vec<u32> {
        let x = self.features(images);
        let logits = self.linear.forward(&x, images.len());
        logits.chunks_exact(self.k).map(argmax).collect()
    }
}

const C1: usize = 8;
const C2: usize = 16;

struct ConvNet {
    conv1: Conv2d,
    conv2: Conv2d,
    out: Linear,
    k: usize,
    res: usize,
}

struct ConvTrace {
    n: usize,
    cols1: Vec<f64>,
    pre1: Vec<f64>,
    cols2: Vec<f64>,
    pre2: Vec<f64>,
    flat: Vec<f64>,
    logits: Vec<f64>,
}

impl ConvNet {
    fn flat_dim(&self) -> usize {
        C2 * (self.res / 4) * (self.res / 4)
    }

    fn forward(&self, x: &[f64], n: usize) -> ConvTrace {
        let g1 = ConvGeom { channels: 1, batch: n, height: self.res, width: self.res };
        let (pre1, cols1) = self.conv1.forward(x, g1);
        let a1: Vec<f64> = pre1.iter().map(|&v| leaky(v)).collect();
        let g2 = ConvGeom { channels: C1, batch: n, height: self.res / 2, width: self.res / 2 };
        let (pre2, cols2) = self.conv2.forward(&a1, g2);
        let a2: Vec<f64> = pre2.iter().map(|&v| leaky(v)).collect();
        let q = (self.res / 4) * (self.res / 4);
        let flat = swap_leading(&a2, C2, n, q);
        let logits = self.out.forward(&flat, n);
        ConvTrace { n, cols1, pre1, cols2, pre2, flat, logits }
    }

    fn fit(images: &[Raster], labels: &[u32], k: usize, epochs: usize, lr: f64, bs: usize, rng: &mut Rng) -> Self {
        let res = images.first().map_or(8, |r| r.width());
        let conv1 = Conv2d::new(1, C1, rng);
        let conv2 = Conv2d::new(C1, C2, rng);
        let flat = C2 * (res / 4) * (res / 4);
        let out = Linear::new(flat, k, he_std(flat), rng);
        let mut m = Self { conv1, conv2, out, k, res };
        let pix = res * res;
        let data: Vec<f64> = images.iter().flat_map(|r| r.data().iter().map(|v| 2.0 * v - 1.0)).collect();
        let mut adam = Adam::new(AdamConfig { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 });
        let mut order: Vec<usize> = (0..images.len()).collect();
        for _ in 0..epochs {
            order.shuffle(rng);
            for chunk in order.chunks(bs) {
                let n = chunk.len();
                let mut x = Vec::with_capacity(n * pix);
                let mut y = Vec::with_capacity(n);
                for &i in chunk {
                    x.extend_from_slice(&data[i * pix..(i + 1) * pix]);
                    y.push(labels[i]);
                }
                let grads = m.gradients(&x, &y);
                adam.step(m.params_mut(), &grads);
            }
        }
        m
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.conv1.weight,
            &mut self.conv1.bias,
            &mut self.conv2.weight,
            &mut self.conv2.bias,
            &mut self.out.weight,
            &mut self.out.bias,
        ]
    }

    /// Gradients of the mean cross-entropy, in `params_mut` order.
    fn gradients(&self, x: &[f64], y: &[u32]) -> Vec<Tensor> {
        let t = self.forward(x, y.len());
        let n = t.n;
        let mut p = t.logits.clone();
        softmax_rows(&mut p, self.k, None);
        for (i, row) in p.chunks_exact_mut(self.k).enumerate() {
            row[y[i] as usize] -= 1.0;
            for v in row.iter_mut() {
                *v /= n as f64;
            }
        }
        let (dwo, dbo) = self.out.backward_params(&t.flat, &p, n);
        let dflat = self.out.backward_input(&p, n);
        let q = (self.res / 4) * (self.res / 4);
        let da2 = swap_leading(&dflat, n, C2, q);
        let dh2: Vec<f64> = da2.iter().zip(&t.pre2).map(|(d, &v)| d * leaky_slope(v)).collect();
        let g2 = ConvGeom { channels: C1, batch: n, height: self.res / 2, width: self.res / 2 };
        let dw2 = self.conv2.grad_weight(&dh2, &t.cols2, g2);
        let db2 = self.conv2.grad_bias(&dh2);
        let da1 = self.conv2.backward_input(&dh2, g2);
        let dh1: Vec<f64> = da1.iter().zip(&t.pre1).map(|(d, &v)| d * leaky_slope(v)).collect();
        let g1 = ConvGeom { channels: 1, batch: n, height: self.res, width: self.res };
        let dw1 = self.conv1.grad_weight(&dh1, &t.cols1, g1);
        let db1 = self.conv1.grad_bias(&dh1);
        vec![dw1, db1, dw2, db2, dwo, dbo]
    }

    fn predict(&self, images: &[Raster]) -> Vec<u32> {
        let pix = self.res * self.res;
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(256) {
            let x: Vec<f64> = chunk.iter().flat_map(|r| r.data().iter().map(|v| 2.0 * v - 1.0)).collect();
            debug_assert_eq!(x.len(), chunk.len() * pix);
            let t = self.forward(&x, chunk.len());
            out.extend(t.logits.chunks_exact(self.k).map(argmax));
        }
        debug_assert_eq!(self.flat_dim(), self.out.inputs());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn convnet_gradient_matches_finite_differences() {
        let mut r = rng::seeded(3);
        let imgs: Vec<Raster> = (0..3)
            .map(|_| Raster::new(8, 8, Tensor::randn(&[64], 0.3, &mut r).data().iter().map(|v| (v + 0.5).clamp(0.0, 1.0)).collect()))
            .collect();
        let mut m = ConvNet::fit(&imgs, &[0, 1, 2], 3, 0, 1e-3, 4, &mut r);
        let x: Vec<f64> = imgs.iter().flat_map(|r| r.data().iter().map(|v| 2.0 * v - 1.0)).collect();
        let y = [0, 2, 1];
        let loss = |m: &ConvNet| {
            let mut l = m.forward(&x, 3).logits;
            softmax_rows(&mut l, 3, Some(&y)) / 3.0
        };
        let grads = m.gradients(&x, &y);
        let h = 1e-6;
        for (pi, g) in grads.iter().enumerate() {
            for j in (0..g.len()).step_by(7) {
                let old = m.params_mut()[pi].data()[j];
                m.params_mut()[pi].data_mut()[j] = old + h;
                let up = loss(&m);
                m.params_mut()[pi].data_mut()[j] = old - h;
                let down = loss(&m);
                m.params_mut()[pi].data_mut()[j] = old;
                let fd = (up - down) / (2.0 * h);
                let a = g.data()[j];
                assert!((a - fd).abs() <= 1e-5 * a.abs().max(fd.abs()).max(1e-6), "param {pi}[{j}]: {a} vs {fd}");
            }
        }
    }

    #[test]
    fn spec_names_and_serde() {
        assert_eq!(ClassifierSpec::logreg().name(), "logreg");
        let s: ClassifierSpec = toml::from_str("kind = \"convnet\"\nepochs = 2").unwrap();
        assert_eq!(s, ClassifierSpec::Convnet { epochs: 2, lr: 2e-3, batch_size: 32 });
        assert!(toml::from_str::<ClassifierSpec>("kind = \"svm\"").is_err());
    }
}
