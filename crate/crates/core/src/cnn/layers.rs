//! Layer primitives: valid convolution, 2x2 max-pooling, LReLU, softmax and
//! the log-likelihood loss.

use super::gemm::{gemm, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Spatial side of every convolution kernel.
pub const KERNEL: usize = 5;
const KK: usize = KERNEL * KERNEL;

/// Default leak of the rectifier.
pub const DEFAULT_SLOPE: f64 = 0.01;

/// Stride-1 valid convolution (cross-correlation), kernels stored
/// `[out_maps][in_depth][5][5]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub out_maps: usize,
    pub in_depth: usize,
    pub kernels: Vec<f64>,
    pub biases: Vec<f64>,
}

impl ConvLayer {
    pub fn zeros(out_maps: usize, in_depth: usize) -> Self {
        ConvLayer {
            out_maps,
            in_depth,
            kernels: vec![0.0; out_maps * in_depth * KK],
            biases: vec![0.0; out_maps],
        }
    }

    /// Receptive field size (`in_depth * 25`).
    pub fn fan_in(&self) -> usize {
        self.in_depth * KK
    }

    pub fn fan_out(&self) -> usize {
        self.out_maps * KK
    }

    pub fn param_count(&self) -> usize {
        self.kernels.len() + self.biases.len()
    }
}

/// Fully connected layer, weights stored `[outputs][inputs]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FcLayer {
    pub outputs: usize,
    pub inputs: usize,
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl FcLayer {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        FcLayer {
            outputs,
            inputs,
            weights: vec![0.0; outputs * inputs],
            biases: vec![0.0; outputs],
        }
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }
}

/// Unfold `depth x h x w` into the `[depth*25] x [(h-4)*(w-4)]` patch matrix.
pub(crate) fn im2col(input: &[f64], depth: usize, h: usize, w: usize, cols: &mut [f64]) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let n = oh * ow;
    debug_assert_eq!(cols.len(), depth * KK * n);
    for d in 0..depth {
        let plane = &input[d * h * w..(d + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut cols[((d * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in 0..oh {
                    let src = &plane[(oy + ky) * w + kx..][..ow];
                    row[oy * ow..(oy + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

/// Fold a patch-matrix gradient back onto the input, accumulating.
pub(crate) fn col2im_add(cols: &[f64], depth: usize, h: usize, w: usize, grad: &mut [f64]) {
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let n = oh * ow;
    for d in 0..depth {
        let plane = &mut grad[d * h * w..(d + 1) * h * w];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &cols[((d * KERNEL + ky) * KERNEL + kx) * n..][..n];
                for oy in 0..oh {
                    let dst = &mut plane[(oy + ky) * w + kx..][..ow];
                    for (g, &c) in dst.iter_mut().zip(&row[oy * ow..(oy + 1) * ow]) {
                        *g += c;
                    }
                }
            }
        }
    }
}

/// `out[m][p] = bias[m] + sum_k kernel[m][k] * cols[k][p]`.
pub(crate) fn conv_cols(layer: &ConvLayer, cols: &[f64], positions: usize, out: &mut [f64]) {
    for (m, b) in layer.biases.iter().enumerate() {
        out[m * positions..(m + 1) * positions].fill(*b);
    }
    gemm(layer.out_maps, layer.fan_in(), positions, &layer.kernels, Op::N, cols, Op::N, 1.0, out);
}

/// Valid cross-correlation with stride 1 plus per-map bias.
pub fn conv_valid(input: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    let (d, h, w) = input.dhw()?;
    if d != layer.in_depth {
        return Err(Error::Shape(format!("conv expects depth {}, got {d}", layer.in_depth)));
    }
    if h < KERNEL || w < KERNEL {
        return Err(Error::Shape(format!("conv input {h}x{w} smaller than the {KERNEL}x{KERNEL} kernel")));
    }
    let (oh, ow) = (h - KERNEL + 1, w - KERNEL + 1);
    let mut cols = vec![0.0; d * KK * oh * ow];
    im2col(input.samples(), d, h, w, &mut cols);
    let mut out = vec![0.0; layer.out_maps * oh * ow];
    conv_cols(layer, &cols, oh * ow, &mut out);
    Tensor::new(vec![layer.out_maps, oh, ow], out)
}

/// Output side of a 2x2/stride-2 pool; an odd trailing row or column is dropped.
#[inline]
pub fn pooled(side: usize) -> usize {
    side / 2
}

pub(crate) fn maxpool_into(input: &[f64], d: usize, h: usize, w: usize, out: &mut [f64], argmax: &mut [u32]) {
    let (ph, pw) = (pooled(h), pooled(w));
    debug_assert_eq!(out.len(), d * ph * pw);
    for c in 0..d {
        let plane = &input[c * h * w..(c + 1) * h * w];
        for py in 0..ph {
            for px in 0..pw {
                let i0 = (2 * py) * w + 2 * px;
                let mut best = i0;
                for i in [i0 + 1, i0 + w, i0 + w + 1] {
                    if plane[i] > plane[best] {
                        best = i;
                    }
                }
                let o = (c * ph + py) * pw + px;
                out[o] = plane[best];
                argmax[o] = (c * h * w + best) as u32;
            }
        }
    }
}

/// Non-overlapping 2x2 max-pool. Returns the pooled tensor and, per output
/// sample, the flat input index that won (first maximum in scan order).
pub fn maxpool_2x2(input: &Tensor) -> Result<(Tensor, Vec<usize>)> {
    let (d, h, w) = input.dhw()?;
    if h < 2 || w < 2 {
        return Err(Error::Shape(format!("max-pool needs at least 2x2, got {h}x{w}")));
    }
    let (ph, pw) = (pooled(h), pooled(w));
    let mut out = vec![0.0; d * ph * pw];
    let mut arg = vec![0u32; d * ph * pw];
    maxpool_into(input.samples(), d, h, w, &mut out, &mut arg);
    Ok((Tensor::new(vec![d, ph, pw], out)?, arg.into_iter().map(|a| a as usize).collect()))
}

#[inline]
pub fn lrelu(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        slope * x
    }
}

/// Derivative of [`lrelu`]; `slope` at zero.
#[inline]
pub fn lrelu_grad(x: f64, slope: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else {
        slope
    }
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Vec<f64> {
    let mut out = z.to_vec();
    softmax_in_place(&mut out);
    out
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Smallest probability the loss will take a log of.
pub const PROB_FLOOR: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Loss {
    pub value: f64,
    /// The labelled probability underflowed and was clamped.
    pub saturated: bool,
}

/// Negative log-likelihood of `label` under `probs`.
pub fn nll_loss(probs: &[f64], label: usize) -> Loss {
    let p = probs[label];
    if p < PROB_FLOOR {
        Loss { value: -PROB_FLOOR.ln(), saturated: true }
    } else {
        Loss { value: -p.ln(), saturated: false }
    }
}
