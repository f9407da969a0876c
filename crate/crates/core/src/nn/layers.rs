use super::ops::{col2im, gemm, im2col, ConvGeom, KERNEL};
use super::tensor::Tensor;
use crate::rng::Rng;

/// He-style init scale for a leaky-ReLU layer with `fan_in` inputs.
pub fn he_std(fan_in: usize) -> f64 {
    let gain = (2.0 / (1.0 + super::ops::LEAKY_SLOPE.powi(2))).sqrt();
    gain / (fan_in as f64).sqrt()
}

/// Fully connected layer, `y = x W^T + b`, rows are samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    pub fn new(inputs: usize, outputs: usize, std: f64, rng: &mut Rng) -> Self {
        Self { weight: Tensor::randn(&[outputs, inputs], std, rng), bias: Tensor::zeros(&[outputs]) }
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &[f64], n: usize) -> Vec<f64> {
        let out = self.outputs();
        let mut y = Vec::with_capacity(n * out);
        for _ in 0..n {
            y.extend_from_slice(self.bias.data());
        }
        gemm(n, self.inputs(), out, x, false, self.weight.data(), true, 1.0, &mut y);
        y
    }

    pub fn backward_input(&self, dy: &[f64], n: usize) -> Vec<f64> {
        let mut dx = vec![0.0; n * self.inputs()];
        gemm(n, self.outputs(), self.inputs(), dy, false, self.weight.data(), false, 0.0, &mut dx);
        dx
    }

    /// `(dW, db)` for upstream gradient `dy` at input `x`.
    pub fn backward_params(&self, x: &[f64], dy: &[f64], n: usize) -> (Tensor, Tensor) {
        let (inp, out) = (self.inputs(), self.outputs());
        let mut dw = vec![0.0; out * inp];
        gemm(out, n, inp, dy, true, x, false, 0.0, &mut dw);
        let mut db = vec![0.0; out];
        for row in dy.chunks_exact(out) {
            for (b, g) in db.iter_mut().zip(row) {
                *b += g;
            }
        }
        (Tensor::from_vec(&[out, inp], dw), Tensor::from_vec(&[out], db))
    }
}

/// 4x4 stride-2 convolution halving the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    /// `[out_channels, in_channels * 16]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Conv2d {
    pub fn new(cin: usize, cout: usize, rng: &mut Rng) -> Self {
        let fan_in = cin * KERNEL * KERNEL;
        Self { weight: Tensor::randn(&[cout, fan_in], he_std(fan_in), rng), bias: Tensor::zeros(&[cout]) }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1] / (KERNEL * KERNEL)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Returns the output `[cout, n, h/2, w/2]` and the patch matrix used.
    pub fn forward(&self, x: &[f64], g: ConvGeom) -> (Vec<f64>, Vec<f64>) {
        let cols = im2col(x, g);
        let y = self.apply(&cols, g, true);
        (y, cols)
    }

    /// `W * cols (+ b)`.
    pub fn apply(&self, cols: &[f64], g: ConvGeom, with_bias: bool) -> Vec<f64> {
        let cout = self.out_channels();
        let ncols = g.col_cols();
        let mut y = vec![0.0; cout * ncols];
        if with_bias {
            for (row, &b) in y.chunks_exact_mut(ncols).zip(self.bias.data()) {
                row.fill(b);
            }
        }
        gemm(cout, g.col_rows(), ncols, self.weight.data(), false, cols, false, 1.0, &mut y);
        y
    }

    pub fn backward_input(&self, dy: &[f64], g: ConvGeom) -> Vec<f64> {
        let mut dcols = vec![0.0; g.col_rows() * g.col_cols()];
        gemm(g.col_rows(), self.out_channels(), g.col_cols(), self.weight.data(), true, dy, false, 0.0, &mut dcols);
        col2im(&dcols, g)
    }

    pub fn grad_weight(&self, dy: &[f64], cols: &[f64], g: ConvGeom) -> Tensor {
        let cout = self.out_channels();
        let mut dw = vec![0.0; cout * g.col_rows()];
        gemm(cout, g.col_cols(), g.col_rows(), dy, false, cols, true, 0.0, &mut dw);
        Tensor::from_vec(self.weight.shape(), dw)
    }

    pub fn grad_bias(&self, dy: &[f64]) -> Tensor {
        channel_sums(dy, self.out_channels())
    }
}

/// 4x4 stride-2 transposed convolution doubling the spatial size.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvTranspose2d {
    /// `[in_channels, out_channels * 16]`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvTranspose2d {
    pub fn new(cin: usize, cout: usize, std: f64, rng: &mut Rng) -> Self {
        Self {
            weight: Tensor::randn(&[cin, cout * KERNEL * KERNEL], std, rng),
            bias: Tensor::zeros(&[cout]),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[1] / (KERNEL * KERNEL)
    }

    /// Geometry of the (doubled) output, seen as the input of the adjoint conv.
    pub fn out_geom(&self, batch: usize, h: usize, w: usize) -> ConvGeom {
        ConvGeom { channels: self.out_channels(), batch, height: 2 * h, width: 2 * w }
    }

    pub fn forward(&self, x: &[f64], batch: usize, h: usize, w: usize) -> Vec<f64> {
        let g = self.out_geom(batch, h, w);
        let ncols = batch * h * w;
        let mut cols = vec![0.0; g.col_rows() * ncols];
        gemm(g.col_rows(), self.in_channels(), ncols, self.weight.data(), true, x, false, 0.0, &mut cols);
        let mut y = col2im(&cols, g);
        let plane = batch * g.height * g.width;
        for (chunk, &b) in y.chunks_exact_mut(plane).zip(self.bias.data()) {
            for v in chunk {
                *v += b;
            }
        }
        y
    }

    /// `(dx, dW, db)`.
    pub fn backward(&self, x: &[f64], dy: &[f64], batch: usize, h: usize, w: usize) -> (Vec<f64>, Tensor, Tensor) {
        let g = self.out_geom(batch, h, w);
        let ncols = batch * h * w;
        let dcols = im2col(dy, g);
        let cin = self.in_channels();
        let mut dx = vec![0.0; cin * ncols];
        gemm(cin, g.col_rows(), ncols, self.weight.data(), false, &dcols, false, 0.0, &mut dx);
        let mut dw = vec![0.0; cin * g.col_rows()];
        gemm(cin, ncols, g.col_rows(), x, false, &dcols, true, 0.0, &mut dw);
        let db = channel_sums(dy, self.out_channels());
        (dx, Tensor::from_vec(self.weight.shape(), dw), db)
    }
}

fn channel_sums(x: &[f64], channels: usize) -> Tensor {
    let plane = x.len() / channels;
    Tensor::from_vec(&[channels], x.chunks_exact(plane).map(|c| c.iter().sum()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn dot(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| x * y).sum()
    }

    #[test]
    fn transposed_conv_is_adjoint_of_conv() {
        // with shared weights, <conv(x), y> == <x, convT(y)> (biases zero)
        let mut r = rng::seeded(11);
        let conv = Conv2d::new(3, 4, &mut r);
        let convt = ConvTranspose2d { weight: conv.weight.clone().reshape(&[4, 48]), bias: Tensor::zeros(&[3]) };
        // convT weight is [cin_T=4, cout_T*16=48] which matches conv's [4, 3*16] layout
        let g = ConvGeom { channels: 3, batch: 2, height: 8, width: 8 };
        let x = Tensor::randn(&[3 * 2 * 64], 1.0, &mut r);
        let y = Tensor::randn(&[4 * 2 * 16], 1.0, &mut r);
        let (cx, _) = conv.forward(x.data(), g);
        let cty = convt.forward(y.data(), 2, 4, 4);
        assert!((dot(&cx, y.data()) - dot(x.data(), &cty)).abs() < 1e-10);
        // and the conv input-gradient is the transposed conv
        let bi = conv.backward_input(y.data(), g);
        for (a, b) in bi.iter().zip(&cty) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn linear_forward_backward_shapes() {
        let mut r = rng::seeded(1);
        let l = Linear::new(3, 2, 1.0, &mut r);
        let x = vec![1.0, 2.0, 3.0, -1.0, 0.0, 1.0];
        let y = l.forward(&x, 2);
        assert_eq!(y.len(), 4);
        let w = l.weight.data();
        assert!((y[0] - (w[0] + 2.0 * w[1] + 3.0 * w[2])).abs() < 1e-12);
        let (dw, db) = l.backward_params(&x, &[1.0, 0.0, 0.0, 1.0], 2);
        assert_eq!(dw.data(), &[1.0, 2.0, 3.0, -1.0, 0.0, 1.0]);
        assert_eq!(db.data(), &[1.0, 1.0]);
    }
}
