//! Background-lighting normalization and channel standardization.
//!
//! Lighting is corrected on the luminance channel only: the image is taken to
//! L*u*v*, the slowly varying background of L (a masked box mean) is removed
//! and the masked mean restored, then the image goes back to sRGB.

mod color;

pub use color::{luv_to_rgb, rgb_to_luv};

use crate::error::{invalid, Error, Result};
use crate::raster::{Image, Mask};

/// Default background window; about an eighth of a DRIVE image width.
pub const DEFAULT_WINDOW: usize = 69;

/// Mean of `channel` over a `window`-square neighbourhood, counting only
/// pixels that are inside both the image and the mask. Pixels whose
/// neighbourhood holds no mask pixel get `NaN`.
pub fn masked_box_mean(channel: &Image, mask: &Mask, window: usize) -> Result<Vec<f64>> {
    channel.require_channels(1, "masked_box_mean")?;
    mask.require_dims(channel.dims(), "masked_box_mean")?;
    let (w, h) = channel.dims();
    let r = window / 2;

    // Summed-area tables with a zero border row/column.
    let stride = w + 1;
    let mut sum = vec![0.0f64; stride * (h + 1)];
    let mut cnt = vec![0u32; stride * (h + 1)];
    let src = channel.samples();
    for y in 0..h {
        let mut row_sum = 0.0;
        let mut row_cnt = 0u32;
        for x in 0..w {
            if mask.get(x, y) {
                row_sum += src[y * w + x];
                row_cnt += 1;
            }
            sum[(y + 1) * stride + x + 1] = sum[y * stride + x + 1] + row_sum;
            cnt[(y + 1) * stride + x + 1] = cnt[y * stride + x + 1] + row_cnt;
        }
    }

    let mut out = vec![f64::NAN; w * h];
    for y in 0..h {
        let y0 = y.saturating_sub(r);
        let y1 = (y + r + 1).min(h);
        for x in 0..w {
            let x0 = x.saturating_sub(r);
            let x1 = (x + r + 1).min(w);
            let n = cnt[y1 * stride + x1] + cnt[y0 * stride + x0] - cnt[y0 * stride + x1] - cnt[y1 * stride + x0];
            if n > 0 {
                let s = sum[y1 * stride + x1] + sum[y0 * stride + x0] - sum[y0 * stride + x1] - sum[y1 * stride + x0];
                out[y * w + x] = s / n as f64;
            }
        }
    }
    Ok(out)
}

fn masked_mean(samples: &[f64], mask: &Mask) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (&v, &m) in samples.iter().zip(mask.flags()) {
        if m {
            sum += v;
            n += 1;
        }
    }
    (n > 0).then(|| sum / n as f64)
}

/// Remove the background illumination from a single channel.
///
/// Inside the mask the output is `channel - background + masked_mean`; pixels
/// outside the mask are copied through.
pub fn normalize_background(channel: &Image, mask: &Mask, window: usize) -> Result<Image> {
    channel.require_channels(1, "normalize_background")?;
    mask.require_dims(channel.dims(), "normalize_background")?;
    if window < 3 || window % 2 == 0 {
        return Err(invalid(format!("background window must be odd and >= 3, got {window}")));
    }
    let (w, h) = channel.dims();
    if window > 2 * w.min(h) {
        return Err(invalid(format!("background window {window} too large for a {w}x{h} image")));
    }
    let Some(mean) = masked_mean(channel.samples(), mask) else {
        return Ok(channel.clone());
    };
    let background = masked_box_mean(channel, mask, window)?;
    let mut out = channel.clone();
    for ((v, &b), &m) in out.samples_mut().iter_mut().zip(&background).zip(mask.flags()) {
        if m {
            *v = *v - b + mean;
        }
    }
    Ok(out)
}

/// Masked z-score: zero mean and unit population deviation over the mask,
/// zero outside it.
pub fn standardize_channel(channel: &Image, mask: &Mask) -> Result<Image> {
    channel.require_channels(1, "standardize_channel")?;
    mask.require_dims(channel.dims(), "standardize_channel")?;
    let n = mask.count();
    if n < 2 {
        return Err(Error::Degenerate(format!("standardization needs at least 2 effective points, got {n}")));
    }
    let mean = masked_mean(channel.samples(), mask).unwrap_or(0.0);
    let var = channel
        .samples()
        .iter()
        .zip(mask.flags())
        .filter(|(_, &m)| m)
        .map(|(&v, _)| (v - mean) * (v - mean))
        .sum::<f64>()
        / n as f64;
    let sd = var.sqrt();
    if !(sd > 0.0) || !sd.is_finite() {
        return Err(Error::Degenerate("channel has zero variance over the mask".into()));
    }
    let mut out = channel.clone();
    for (v, &m) in out.samples_mut().iter_mut().zip(mask.flags()) {
        *v = if m { (*v - mean) / sd } else { 0.0 };
    }
    Ok(out)
}

/// Normalize the lighting of an sRGB fundus image via its L channel.
/// Pixels outside the mask are returned bit-for-bit unchanged.
pub fn normalize_fundus(img: &Image, mask: &Mask, window: usize) -> Result<Image> {
    img.require_channels(3, "normalize_fundus")?;
    mask.require_dims(img.dims(), "normalize_fundus")?;
    let mut luv = rgb_to_luv(img)?;
    let lum = normalize_background(&luv.channel(0), mask, window)?;
    for (dst, &src) in luv.plane_mut(0).iter_mut().zip(lum.samples()) {
        *dst = src.clamp(0.0, 100.0);
    }
    let mut out = luv_to_rgb(&luv)?;
    let n = img.width() * img.height();
    for c in 0..3 {
        for i in 0..n {
            if !mask.flags()[i] {
                out.samples_mut()[c * n + i] = img.samples()[c * n + i];
            }
        }
    }
    Ok(out)
}
