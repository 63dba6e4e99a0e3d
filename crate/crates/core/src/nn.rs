//! Minimal dense/conv network stack with hand-written backward passes.
//!
//! All parameters of a network live in one flat `Vec<f64>`; layers hold
//! `Slot` ranges into it. That keeps the optimizer generic and makes
//! finite-difference gradient checks a one-line perturbation. Every pass is
//! single-threaded with a fixed loop order, so results are bit-reproducible.

use alloc::vec;
use alloc::vec::Vec;

use crate::image::{ImageSample, CHANNELS};
use crate::rng::DetRng;

/// Channel-major feature map (`c * h * w` values, CHW order).
#[derive(Debug, Clone, PartialEq)]
pub struct Feat {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl Feat {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Feat {
            c,
            h,
            w,
            data: vec![0.0; c * h * w],
        }
    }

    pub fn from_image(image: &ImageSample) -> Self {
        Feat {
            c: CHANNELS,
            h: image.height(),
            w: image.width(),
            data: image.data().to_vec(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.h + y) * self.w + x]
    }

    #[inline]
    pub fn at_mut(&mut self, c: usize, y: usize, x: usize) -> &mut f64 {
        &mut self.data[(c * self.h + y) * self.w + x]
    }

    /// Stacks `self` over `other` along the channel axis.
    pub fn concat_channels(&self, other: &Feat) -> Feat {
        assert_eq!((self.h, self.w), (other.h, other.w), "spatial mismatch");
        let mut data = Vec::with_capacity(self.len() + other.len());
        data.extend_from_slice(&self.data);
        data.extend_from_slice(&other.data);
        Feat {
            c: self.c + other.c,
            h: self.h,
            w: self.w,
            data,
        }
    }

    /// Splits a gradient of a concatenation back into both halves.
    pub fn split_channels(&self, first_c: usize) -> (Feat, Feat) {
        assert!(first_c <= self.c);
        let cut = first_c * self.h * self.w;
        (
            Feat {
                c: first_c,
                h: self.h,
                w: self.w,
                data: self.data[..cut].to_vec(),
            },
            Feat {
                c: self.c - first_c,
                h: self.h,
                w: self.w,
                data: self.data[cut..].to_vec(),
            },
        )
    }
}

/// Range of a layer's parameters inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Slot {
    pub offset: usize,
    pub len: usize,
}

impl Slot {
    pub fn of<'a>(&self, params: &'a [f64]) -> &'a [f64] {
        &params[self.offset..self.offset + self.len]
    }

    pub fn of_mut<'a>(&self, params: &'a mut [f64]) -> &'a mut [f64] {
        &mut params[self.offset..self.offset + self.len]
    }
}

/// 2-D convolution with zero padding. Weights are laid out
/// `[out_ch][in_ch][k][k]`, biases `[out_ch]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Conv2d {
    /// Output spatial size with floor semantics, as in common frameworks.
    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        assert!(
            h + 2 * self.pad >= self.k && w + 2 * self.pad >= self.k,
            "kernel larger than padded {h}x{w} input"
        );
        (
            (h + 2 * self.pad - self.k) / self.stride + 1,
            (w + 2 * self.pad - self.k) / self.stride + 1,
        )
    }

    pub fn forward(&self, params: &[f64], input: &Feat) -> Feat {
        assert_eq!(input.c, self.in_ch);
        let (oh, ow) = self.out_dims(input.h, input.w);
        let w = self.weight.of(params);
        let b = self.bias.of(params);
        let mut out = Feat::zeros(self.out_ch, oh, ow);
        for o in 0..self.out_ch {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = b[o];
                    for i in 0..self.in_ch {
                        for ky in 0..self.k {
                            let iy = y * self.stride + ky;
                            let Some(iy) = iy.checked_sub(self.pad) else {
                                continue;
                            };
                            if iy >= input.h {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = x * self.stride + kx;
                                let Some(ix) = ix.checked_sub(self.pad) else {
                                    continue;
                                };
                                if ix >= input.w {
                                    continue;
                                }
                                acc += w[((o * self.in_ch + i) * self.k + ky) * self.k + kx]
                                    * input.at(i, iy, ix);
                            }
                        }
                    }
                    *out.at_mut(o, y, x) = acc;
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grads` and returns the input
    /// gradient.
    pub fn backward(
        &self,
        params: &[f64],
        input: &Feat,
        grad_out: &Feat,
        grads: &mut [f64],
    ) -> Feat {
        let (oh, ow) = self.out_dims(input.h, input.w);
        assert_eq!((grad_out.c, grad_out.h, grad_out.w), (self.out_ch, oh, ow));
        let w = self.weight.of(params);
        let mut grad_in = Feat::zeros(input.c, input.h, input.w);
        for o in 0..self.out_ch {
            for y in 0..oh {
                for x in 0..ow {
                    let g = grad_out.at(o, y, x);
                    grads[self.bias.offset + o] += g;
                    for i in 0..self.in_ch {
                        for ky in 0..self.k {
                            let iy = y * self.stride + ky;
                            let Some(iy) = iy.checked_sub(self.pad) else {
                                continue;
                            };
                            if iy >= input.h {
                                continue;
                            }
                            for kx in 0..self.k {
                                let ix = x * self.stride + kx;
                                let Some(ix) = ix.checked_sub(self.pad) else {
                                    continue;
                                };
                                if ix >= input.w {
                                    continue;
                                }
                                let widx = ((o * self.in_ch + i) * self.k + ky) * self.k + kx;
                                grads[self.weight.offset + widx] += g * input.at(i, iy, ix);
                                *grad_in.at_mut(i, iy, ix) += g * w[widx];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

/// Fully connected layer; weights `[out][in]`, biases `[out]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weight: Slot,
    pub bias: Slot,
}

impl Linear {
    pub fn forward(&self, params: &[f64], input: &[f64]) -> Vec<f64> {
        assert_eq!(input.len(), self.in_dim);
        let w = self.weight.of(params);
        let b = self.bias.of(params);
        (0..self.out_dim)
            .map(|o| {
                let row = &w[o * self.in_dim..(o + 1) * self.in_dim];
                b[o] + row.iter().zip(input).map(|(wv, iv)| wv * iv).sum::<f64>()
            })
            .collect()
    }

    pub fn backward(
        &self,
        params: &[f64],
        input: &[f64],
        grad_out: &[f64],
        grads: &mut [f64],
    ) -> Vec<f64> {
        assert_eq!(grad_out.len(), self.out_dim);
        let w = self.weight.of(params);
        let mut grad_in = vec![0.0; self.in_dim];
        for o in 0..self.out_dim {
            let g = grad_out[o];
            grads[self.bias.offset + o] += g;
            for i in 0..self.in_dim {
                grads[self.weight.offset + o * self.in_dim + i] += g * input[i];
                grad_in[i] += g * w[o * self.in_dim + i];
            }
        }
        grad_in
    }
}

/// Allocates layers inside one flat parameter vector, initializing weights
/// uniformly on the Glorot interval and biases to zero.
pub struct ParamBuilder {
    values: Vec<f64>,
    rng: DetRng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        ParamBuilder {
            values: Vec::new(),
            rng: DetRng::derive(seed, "param-init"),
        }
    }

    fn alloc_pair(&mut self, weights: usize, biases: usize, fan_in: usize, fan_out: usize) -> (Slot, Slot) {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let weight = Slot {
            offset: self.values.len(),
            len: weights,
        };
        for _ in 0..weights {
            let v = self.rng.range_f64(-limit, limit);
            self.values.push(v);
        }
        let bias = Slot {
            offset: self.values.len(),
            len: biases,
        };
        self.values.extend(core::iter::repeat(0.0).take(biases));
        (weight, bias)
    }

    pub fn conv(&mut self, in_ch: usize, out_ch: usize, k: usize, stride: usize, pad: usize) -> Conv2d {
        let (weight, bias) = self.alloc_pair(
            out_ch * in_ch * k * k,
            out_ch,
            in_ch * k * k,
            out_ch * k * k,
        );
        Conv2d {
            in_ch,
            out_ch,
            k,
            stride,
            pad,
            weight,
            bias,
        }
    }

    pub fn linear(&mut self, in_dim: usize, out_dim: usize) -> Linear {
        let (weight, bias) = self.alloc_pair(out_dim * in_dim, out_dim, in_dim, out_dim);
        Linear {
            in_dim,
            out_dim,
            weight,
            bias,
        }
    }

    pub fn finish(self) -> Vec<f64> {
        self.values
    }
}

/// Leaky ReLU with the given negative slope.
pub fn lrelu_forward(input: &Feat, slope: f64) -> Feat {
    let mut out = input.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v *= slope;
        }
    }
    out
}

pub fn lrelu_backward(input: &Feat, grad_out: &Feat, slope: f64) -> Feat {
    let mut grad = grad_out.clone();
    for (g, &x) in grad.data.iter_mut().zip(input.data.iter()) {
        if x < 0.0 {
            *g *= slope;
        }
    }
    grad
}

pub fn tanh_forward(input: &Feat) -> Feat {
    let mut out = input.clone();
    for v in &mut out.data {
        *v = libm::tanh(*v);
    }
    out
}

/// Gradient through tanh, expressed with the forward *output*.
pub fn tanh_backward(output: &Feat, grad_out: &Feat) -> Feat {
    let mut grad = grad_out.clone();
    for (g, &y) in grad.data.iter_mut().zip(output.data.iter()) {
        *g *= 1.0 - y * y;
    }
    grad
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// `log(1 + exp(z))`, computed without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + libm::log1p(libm::exp(-z))
    } else {
        libm::log1p(libm::exp(z))
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2_forward(input: &Feat) -> Feat {
    let mut out = Feat::zeros(input.c, input.h * 2, input.w * 2);
    for c in 0..input.c {
        for y in 0..input.h {
            for x in 0..input.w {
                let v = input.at(c, y, x);
                for dy in 0..2 {
                    for dx in 0..2 {
                        *out.at_mut(c, 2 * y + dy, 2 * x + dx) = v;
                    }
                }
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Feat) -> Feat {
    assert!(grad_out.h % 2 == 0 && grad_out.w % 2 == 0);
    let mut grad = Feat::zeros(grad_out.c, grad_out.h / 2, grad_out.w / 2);
    for c in 0..grad.c {
        for y in 0..grad.h {
            for x in 0..grad.w {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += grad_out.at(c, 2 * y + dy, 2 * x + dx);
                    }
                }
                *grad.at_mut(c, y, x) = acc;
            }
        }
    }
    grad
}

/// Adam optimizer over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl Adam {
    pub fn new(lr: f64, len: usize) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let b1t = 1.0 - libm::pow(self.beta1, self.t as f64);
        let b2t = 1.0 - libm::pow(self.beta2, self.t as f64);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grads[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check<F>(params: &mut Vec<f64>, analytic: &[f64], mut loss: F)
    where
        F: FnMut(&[f64]) -> f64,
    {
        let h = 1e-6;
        for i in 0..params.len() {
            let orig = params[i];
            params[i] = orig + h;
            let up = loss(params);
            params[i] = orig - h;
            let down = loss(params);
            params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - analytic[i]).abs() < 1e-5 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs analytic {}",
                analytic[i]
            );
        }
    }

    fn noisy_feat(c: usize, h: usize, w: usize, seed: u64) -> Feat {
        let mut rng = DetRng::seed(seed);
        Feat {
            c,
            h,
            w,
            data: (0..c * h * w).map(|_| rng.range_f64(-1.0, 1.0)).collect(),
        }
    }

    #[test]
    fn conv_identity_kernel() {
        let mut b = ParamBuilder::new(1);
        let conv = b.conv(1, 1, 3, 1, 1);
        let mut params = b.finish();
        for p in &mut params {
            *p = 0.0;
        }
        params[conv.weight.offset + 4] = 1.0; // centre tap
        let input = noisy_feat(1, 4, 4, 2);
        let out = conv.forward(&params, &input);
        assert_eq!(out.data, input.data);
    }

    #[test]
    fn conv_stride_two_dims() {
        let mut b = ParamBuilder::new(1);
        let conv = b.conv(3, 5, 3, 2, 1);
        let params = b.finish();
        let out = conv.forward(&params, &noisy_feat(3, 8, 8, 3));
        assert_eq!((out.c, out.h, out.w), (5, 4, 4));
        let conv4 = {
            let mut b = ParamBuilder::new(2);
            let c = b.conv(3, 4, 4, 2, 1);
            (c, b.finish())
        };
        let out4 = conv4.0.forward(&conv4.1, &noisy_feat(3, 8, 8, 4));
        assert_eq!((out4.c, out4.h, out4.w), (4, 4, 4));
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut b = ParamBuilder::new(7);
        let conv = b.conv(2, 3, 3, 2, 1);
        let mut params = b.finish();
        let input = noisy_feat(2, 4, 4, 8);
        // Loss: weighted sum of outputs, weights (k+1)*0.01.
        let weight = |n: usize| (0..n).map(|k| (k + 1) as f64 * 0.01).collect::<Vec<_>>();

        let loss = |p: &[f64]| -> f64 {
            let out = conv.forward(p, &input);
            out.data
                .iter()
                .zip(weight(out.len()))
                .map(|(v, w)| v * w)
                .sum()
        };
        let out = conv.forward(&params, &input);
        let grad_out = Feat {
            c: out.c,
            h: out.h,
            w: out.w,
            data: weight(out.len()),
        };
        let mut grads = vec![0.0; params.len()];
        let grad_in = conv.backward(&params, &input, &grad_out, &mut grads);
        fd_check(&mut params, &grads, loss);

        // Input gradient via the same loss as a function of the input.
        let h = 1e-6;
        for i in [0usize, 7, 15, 31] {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut minus = input.clone();
            minus.data[i] -= h;
            let f = |feat: &Feat| -> f64 {
                let out = conv.forward(&params, feat);
                out.data
                    .iter()
                    .zip(weight(out.len()))
                    .map(|(v, w)| v * w)
                    .sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - grad_in.data[i]).abs() < 1e-5 * (1.0 + fd.abs()));
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut b = ParamBuilder::new(3);
        let lin = b.linear(4, 3);
        let mut params = b.finish();
        let input = [0.3, -0.2, 0.8, 0.05];
        let loss = |p: &[f64]| -> f64 {
            lin.forward(p, &input)
                .iter()
                .enumerate()
                .map(|(i, v)| v * (i + 1) as f64)
                .sum()
        };
        let grad_out = [1.0, 2.0, 3.0];
        let mut grads = vec![0.0; params.len()];
        let grad_in = lin.backward(&params, &input, &grad_out, &mut grads);
        fd_check(&mut params, &grads, loss);
        let w = lin.weight.of(&params);
        let expect: f64 = (0..3).map(|o| grad_out[o] * w[o * 4]).sum();
        assert!((grad_in[0] - expect).abs() < 1e-12);
    }

    #[test]
    fn activations_roundtrip_gradients() {
        let input = noisy_feat(1, 3, 3, 5);
        let grad_out = noisy_feat(1, 3, 3, 6);
        let h = 1e-6;

        let lr = lrelu_backward(&input, &grad_out, 0.2);
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut minus = input.clone();
            minus.data[i] -= h;
            let f = |x: &Feat| -> f64 {
                lrelu_forward(x, 0.2)
                    .data
                    .iter()
                    .zip(grad_out.data.iter())
                    .map(|(v, g)| v * g)
                    .sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - lr.data[i]).abs() < 1e-5);
        }

        let out = tanh_forward(&input);
        let tg = tanh_backward(&out, &grad_out);
        for i in 0..input.len() {
            let mut plus = input.clone();
            plus.data[i] += h;
            let mut minus = input.clone();
            minus.data[i] -= h;
            let f = |x: &Feat| -> f64 {
                tanh_forward(x)
                    .data
                    .iter()
                    .zip(grad_out.data.iter())
                    .map(|(v, g)| v * g)
                    .sum()
            };
            let fd = (f(&plus) - f(&minus)) / (2.0 * h);
            assert!((fd - tg.data[i]).abs() < 1e-5);
        }
    }

    #[test]
    fn upsample_forward_and_backward() {
        let input = noisy_feat(2, 2, 2, 9);
        let up = upsample2_forward(&input);
        assert_eq!((up.h, up.w), (4, 4));
        assert_eq!(up.at(1, 3, 3), input.at(1, 1, 1));
        let grad = upsample2_backward(&up);
        for c in 0..2 {
            for y in 0..2 {
                for x in 0..2 {
                    assert!((grad.at(c, y, x) - 4.0 * input.at(c, y, x)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn concat_split_roundtrip() {
        let a = noisy_feat(2, 3, 3, 1);
        let b = noisy_feat(3, 3, 3, 2);
        let cat = a.concat_channels(&b);
        assert_eq!(cat.c, 5);
        let (ra, rb) = cat.split_channels(2);
        assert_eq!(ra, a);
        assert_eq!(rb, b);
    }

    #[test]
    fn sigmoid_softplus_stable() {
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!(sigmoid(800.0) <= 1.0 && sigmoid(800.0) > 0.999);
        assert!(sigmoid(-800.0) >= 0.0 && sigmoid(-800.0) < 1e-10);
        assert!(softplus(-800.0) >= 0.0);
        assert!((softplus(800.0) - 800.0).abs() < 1e-9);
        assert!((softplus(0.0) - libm::log(2.0)).abs() < 1e-15);
    }

    #[test]
    fn adam_reduces_quadratic() {
        let mut params = vec![5.0, -3.0];
        let mut adam = Adam::new(0.1, 2);
        for _ in 0..500 {
            let grads: Vec<f64> = params.iter().map(|p| 2.0 * p).collect();
            adam.step(&mut params, &grads);
        }
        assert!(params.iter().all(|p| p.abs() < 1e-2));
    }

    #[test]
    fn xavier_init_bounds_and_zero_bias() {
        let mut b = ParamBuilder::new(4);
        let conv = b.conv(4, 8, 3, 1, 1);
        let params = b.finish();
        let limit = libm::sqrt(6.0 / ((4 * 9 + 8 * 9) as f64));
        for &v in conv.weight.of(&params) {
            assert!(v.abs() <= limit);
        }
        assert!(conv.bias.of(&params).iter().all(|&v| v == 0.0));
        assert_eq!(params.len(), 8 * 4 * 9 + 8);
    }
}
