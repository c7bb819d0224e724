//! Separable bicubic resampling with the Keys kernel (a = -0.5).
//!
//! Output sample `k` sits at source coordinate `(k + 0.5) * in / out - 0.5`.
//! On shrink the kernel is stretched by the scale factor so it also acts as
//! a low-pass filter. Taps falling outside the source are clamped to the edge
//! and every tap set is normalized to sum to one.

use crate::error::{invalid, Result};

pub const KEYS_A: f64 = -0.5;

/// Keys cubic convolution kernel.
#[inline]
pub fn keys_kernel(x: f64) -> f64 {
    let a = KEYS_A;
    let x = x.abs();
    if x <= 1.0 {
        ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0
    } else if x < 2.0 {
        ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a
    } else {
        0.0
    }
}

/// Tap indices and weights for resampling one axis from `src_len` to `dst_len`.
#[derive(Debug, Clone)]
struct AxisTaps {
    taps: usize,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl AxisTaps {
    fn new(src_len: usize, dst_len: usize) -> Self {
        let scale = src_len as f64 / dst_len as f64;
        let stretch = scale.max(1.0);
        let support = 2.0 * stretch;
        let taps = 2 * support.ceil() as usize + 1;
        let mut index = Vec::with_capacity(taps * dst_len);
        let mut weight = Vec::with_capacity(taps * dst_len);
        for k in 0..dst_len {
            let center = (k as f64 + 0.5) * scale - 0.5;
            let first = (center - support).floor() as isize;
            let start = weight.len();
            for t in 0..taps as isize {
                let i = first + t;
                weight.push(keys_kernel((i as f64 - center) / stretch));
                index.push(i.clamp(0, src_len as isize - 1) as usize);
            }
            let sum: f64 = weight[start..].iter().sum();
            for w in &mut weight[start..] {
                *w /= sum;
            }
        }
        AxisTaps { taps, index, weight }
    }

    #[inline]
    fn taps_for(&self, k: usize) -> (&[usize], &[f64]) {
        let r = k * self.taps..(k + 1) * self.taps;
        (&self.index[r.clone()], &self.weight[r])
    }
}

/// Precomputed resampling plan for a fixed pair of sizes.
#[derive(Debug, Clone)]
pub struct Resampler {
    src: (usize, usize),
    dst: (usize, usize),
    horizontal: AxisTaps,
    vertical: AxisTaps,
}

impl Resampler {
    pub fn new(src_w: usize, src_h: usize, dst_w: usize, dst_h: usize) -> Result<Self> {
        if src_w < 2 || src_h < 2 {
            return Err(invalid(format!("bicubic source must be at least 2x2, got {src_w}x{src_h}")));
        }
        if dst_w < 1 || dst_h < 1 {
            return Err(invalid(format!("bicubic output must be at least 1x1, got {dst_w}x{dst_h}")));
        }
        Ok(Resampler {
            src: (src_w, src_h),
            dst: (dst_w, dst_h),
            horizontal: AxisTaps::new(src_w, dst_w),
            vertical: AxisTaps::new(src_h, dst_h),
        })
    }

    pub fn src_dims(&self) -> (usize, usize) {
        self.src
    }

    pub fn dst_dims(&self) -> (usize, usize) {
        self.dst
    }

    /// Resample a window read through `row(y)`, which must return source row
    /// `y` (length `src_w`). `scratch` is grown as needed.
    pub fn apply_rows<'a>(&self, row: impl Fn(usize) -> &'a [f64], scratch: &mut Vec<f64>, out: &mut [f64]) {
        let (sw, sh) = self.src;
        let (dw, dh) = self.dst;
        debug_assert_eq!(out.len(), dw * dh);
        scratch.clear();
        scratch.resize(sh * dw, 0.0);
        for y in 0..sh {
            let src = row(y);
            debug_assert_eq!(src.len(), sw);
            let dst = &mut scratch[y * dw..(y + 1) * dw];
            for (k, d) in dst.iter_mut().enumerate() {
                let (idx, wt) = self.horizontal.taps_for(k);
                *d = idx.iter().zip(wt).map(|(&i, &w)| w * src[i]).sum();
            }
        }
        out.fill(0.0);
        for k in 0..dh {
            let (idx, wt) = self.vertical.taps_for(k);
            let dst = &mut out[k * dw..(k + 1) * dw];
            for (&i, &w) in idx.iter().zip(wt) {
                let src = &scratch[i * dw..(i + 1) * dw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Resample a contiguous row-major matrix.
    pub fn apply(&self, src: &[f64]) -> Vec<f64> {
        let (sw, sh) = self.src;
        assert_eq!(src.len(), sw * sh, "source length does not match resampler");
        let mut out = vec![0.0; self.dst.0 * self.dst.1];
        let mut scratch = Vec::new();
        self.apply_rows(|y| &src[y * sw..(y + 1) * sw], &mut scratch, &mut out);
        out
    }
}

/// Resize a row-major `src_w`x`src_h` matrix to `out_w`x`out_h`.
pub fn resize_bicubic(src: &[f64], src_w: usize, src_h: usize, out_w: usize, out_h: usize) -> Result<Vec<f64>> {
    if src.len() != src_w * src_h {
        return Err(invalid(format!("matrix has {} samples, expected {}", src.len(), src_w * src_h)));
    }
    Ok(Resampler::new(src_w, src_h, out_w, out_h)?.apply(src))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn kernel_shape() {
        assert_eq!(keys_kernel(0.0), 1.0);
        assert_eq!(keys_kernel(1.0), 0.0);
        assert_eq!(keys_kernel(2.0), 0.0);
        assert_eq!(keys_kernel(-2.5), 0.0);
        // continuity at the knot
        assert!((keys_kernel(1.0 - 1e-9) - keys_kernel(1.0 + 1e-9)).abs() < 1e-8);
        assert!((keys_kernel(0.5) - 0.5625).abs() < 1e-15);
        assert!((keys_kernel(1.5) + 0.0625).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(resize_bicubic(&[1.0], 1, 1, 3, 3).is_err());
        assert!(resize_bicubic(&[1.0; 4], 2, 2, 0, 3).is_err());
        assert!(resize_bicubic(&[1.0; 4], 2, 2, 3, 0).is_err());
        assert!(resize_bicubic(&[1.0; 3], 2, 2, 3, 3).is_err());
    }

    #[test]
    fn linear_ramp_survives_upscale() {
        let src: Vec<f64> = (0..49).map(|i| (i % 7) as f64).collect();
        let out = resize_bicubic(&src, 7, 7, 33, 33).unwrap();
        let scale = 7.0 / 33.0;
        for y in 0..33 {
            // away from the clamped edge taps
            for x in 0..33 {
                let s = (x as f64 + 0.5) * scale - 0.5;
                if s >= 1.0 && s <= 5.0 {
                    assert!((out[y * 33 + x] - s).abs() < 1e-9, "x={x}: {} vs {s}", out[y * 33 + x]);
                }
            }
        }
    }

    #[test]
    fn same_size_is_identity() {
        let src: Vec<f64> = (0..35).map(|i| (i as f64 * 0.37).sin()).collect();
        let out = resize_bicubic(&src, 7, 5, 7, 5).unwrap();
        for (a, b) in out.iter().zip(&src) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    proptest! {
        #[test]
        fn partition_of_unity(c in -100.0f64..100.0, sw in 2usize..40, sh in 2usize..40, dw in 1usize..50, dh in 1usize..50) {
            let out = resize_bicubic(&vec![c; sw * sh], sw, sh, dw, dh).unwrap();
            for v in out {
                prop_assert!((v - c).abs() < 1e-12);
            }
        }
    }
}
