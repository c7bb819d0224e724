//! Multi-scale network inputs.
//!
//! Every effective pixel gets a three-plane input of `size`x`size` samples
//! read from the standardized green channel:
//!
//! 1. a small neighbourhood (7x7) upscaled to `size`,
//! 2. the raw `size`x`size` neighbourhood,
//! 3. a large block (165x165) downscaled to `size`.
//!
//! Windows are centered on the pixel and read from a reflect-101 padded copy
//! of the channel, so corner pixels get full inputs too.

mod resample;

pub use resample::{keys_kernel, resize_bicubic, Resampler, KEYS_A};

use crate::error::{invalid, Result};
use crate::raster::{Image, Mask};

/// Window sizes of the three input planes. All must be odd.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PatchGeometry {
    pub small: usize,
    pub mid: usize,
    pub large: usize,
    /// Side of every plane fed to the network.
    pub size: usize,
}

impl Default for PatchGeometry {
    fn default() -> Self {
        PatchGeometry {
            small: 7,
            mid: 33,
            large: 165,
            size: 33,
        }
    }
}

impl PatchGeometry {
    pub fn validate(&self) -> Result<()> {
        for (name, w) in [("small", self.small), ("mid", self.mid), ("large", self.large), ("size", self.size)] {
            if w < 3 || w % 2 == 0 {
                return Err(invalid(format!("{name} window must be odd and >= 3, got {w}")));
            }
        }
        Ok(())
    }

    /// Padding needed so the widest window fits around any pixel.
    pub fn pad_radius(&self) -> usize {
        self.small.max(self.mid).max(self.large) / 2
    }

    pub fn plane_len(&self) -> usize {
        self.size * self.size
    }

    pub fn input_len(&self) -> usize {
        3 * self.plane_len()
    }
}

/// One network input: three `size`x`size` planes, plane-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchInput {
    size: usize,
    samples: Vec<f64>,
    origin: (usize, usize),
}

impl PatchInput {
    pub fn new(size: usize, samples: Vec<f64>, origin: (usize, usize)) -> Result<Self> {
        if samples.len() != 3 * size * size {
            return Err(invalid(format!("patch of side {size} needs {} samples, got {}", 3 * size * size, samples.len())));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("patch sample {i} is not finite")));
        }
        Ok(PatchInput { size, samples, origin })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.size * self.size;
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn origin(&self) -> (usize, usize) {
        self.origin
    }
}

/// All mask pixels in row-major order.
pub fn effective_points(mask: &Mask) -> Vec<(usize, usize)> {
    let w = mask.width();
    mask.flags()
        .iter()
        .enumerate()
        .filter(|(_, &f)| f)
        .map(|(i, _)| (i % w, i / w))
        .collect()
}

/// Reflect-101 padding (`dcb|abcd|cba`) of a single channel.
pub fn mirror_pad(channel: &Image, radius: usize) -> Result<Image> {
    channel.require_channels(1, "mirror_pad")?;
    let (w, h) = channel.dims();
    if radius >= w.min(h) {
        return Err(invalid(format!("pad radius {radius} must be below the smaller side of a {w}x{h} image")));
    }
    Ok(fold_pad(channel, radius))
}

/// Index into `0..n` reached by bouncing off both borders.
fn fold(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m >= n as isize { period - m } else { m }) as usize
}

/// Reflect-101 padding repeated as often as needed, so any radius works.
fn fold_pad(channel: &Image, radius: usize) -> Image {
    let (w, h) = channel.dims();
    let (pw, ph) = (w + 2 * radius, h + 2 * radius);
    let r = radius as isize;
    let src = channel.samples();
    let cols: Vec<usize> = (0..pw as isize).map(|x| fold(x - r, w)).collect();
    let mut out = Vec::with_capacity(pw * ph);
    for y in 0..ph as isize {
        let row = &src[fold(y - r, h) * w..][..w];
        out.extend(cols.iter().map(|&c| row[c]));
    }
    Image::new(pw, ph, 1, out).expect("padded extent matches samples")
}

/// Reusable buffer for [`PatchSource::build_into`].
#[derive(Debug, Default)]
pub struct PatchScratch {
    rows: Vec<f64>,
}

/// Builds [`PatchInput`]s for one image on demand.
#[derive(Debug, Clone)]
pub struct PatchSource {
    geometry: PatchGeometry,
    width: usize,
    height: usize,
    pad: usize,
    padded: Image,
    /// Separate source for the large-context plane, when configured.
    context: Option<Image>,
    up: Resampler,
    mid: Option<Resampler>,
    down: Resampler,
}

impl PatchSource {
    /// `std_green` is the standardized channel. `context`, when given, is the
    /// (same-sized) channel the large window is read from instead.
    pub fn new(std_green: &Image, context: Option<&Image>, geometry: PatchGeometry) -> Result<Self> {
        geometry.validate()?;
        std_green.require_channels(1, "patch source")?;
        let pad = geometry.pad_radius();
        let padded = fold_pad(std_green, pad);
        let context = match context {
            Some(c) => {
                if c.dims() != std_green.dims() {
                    return Err(invalid("context channel must match the standardized channel size"));
                }
                Some(fold_pad(c, pad))
            }
            None => None,
        };
        let s = geometry.size;
        Ok(PatchSource {
            geometry,
            width: std_green.width(),
            height: std_green.height(),
            pad,
            padded,
            context,
            up: Resampler::new(geometry.small, geometry.small, s, s)?,
            mid: if geometry.mid == s { None } else { Some(Resampler::new(geometry.mid, geometry.mid, s, s)?) },
            down: Resampler::new(geometry.large, geometry.large, s, s)?,
        })
    }

    pub fn geometry(&self) -> PatchGeometry {
        self.geometry
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn build(&self, x: usize, y: usize) -> Result<PatchInput> {
        let mut samples = vec![0.0; self.geometry.input_len()];
        self.build_into(x, y, &mut samples, &mut PatchScratch::default())?;
        PatchInput::new(self.geometry.size, samples, (x, y))
    }

    /// Write the three planes for pixel (x, y) into `out`.
    pub fn build_into<'a>(&'a self, x: usize, y: usize, out: &mut [f64], scratch: &mut PatchScratch) -> Result<()> {
        if x >= self.width || y >= self.height {
            return Err(invalid(format!("pixel ({x},{y}) outside {}x{} image", self.width, self.height)));
        }
        let n = self.geometry.plane_len();
        assert_eq!(out.len(), 3 * n, "patch buffer has wrong length");
        let (p1, rest) = out.split_at_mut(n);
        let (p2, p3) = rest.split_at_mut(n);

        let window = |img: &'a Image, side: usize| window_rows(img, x + self.pad - side / 2, y + self.pad - side / 2, side);

        let g = &self.geometry;
        self.up.apply_rows(window(&self.padded, g.small), &mut scratch.rows, p1);
        match &self.mid {
            None => {
                let rows = window(&self.padded, g.mid);
                for r in 0..g.mid {
                    p2[r * g.size..(r + 1) * g.size].copy_from_slice(rows(r));
                }
            }
            Some(rs) => rs.apply_rows(window(&self.padded, g.mid), &mut scratch.rows, p2),
        }
        let ctx = self.context.as_ref().unwrap_or(&self.padded);
        self.down.apply_rows(window(ctx, g.large), &mut scratch.rows, p3);
        Ok(())
    }
}

fn window_rows<'a>(img: &'a Image, x0: usize, y0: usize, side: usize) -> impl Fn(usize) -> &'a [f64] + 'a {
    let pw = img.width();
    let s = img.samples();
    move |r: usize| {
        let start = (y0 + r) * pw + x0;
        &s[start..start + side]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(w: usize, h: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(w, h, |_, _| rng.random::<f64>() * 2.0 - 1.0).unwrap()
    }

    #[test]
    fn effective_points_row_major() {
        assert!(effective_points(&Mask::empty(4, 3)).is_empty());
        assert_eq!(effective_points(&Mask::full(565, 584)).len(), 329_960);
        let m = Mask::from_fn(3, 2, |x, y| (x + y) % 2 == 1);
        assert_eq!(effective_points(&m), vec![(1, 0), (0, 1), (2, 1)]);
    }

    #[test]
    fn pad_reflects_without_repeating_edge() {
        let row = Image::new(3, 1, 1, vec![1.0, 2.0, 3.0]).unwrap();
        // a 1-pixel-high image cannot be padded at radius 1
        assert!(mirror_pad(&row, 1).is_err());
        let img = Image::new(3, 2, 1, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let p = mirror_pad(&img, 1).unwrap();
        assert_eq!(p.dims(), (5, 4));
        assert_eq!(&p.samples()[5..10], &[2.0, 1.0, 2.0, 3.0, 2.0]);
        assert_eq!(mirror_pad(&img, 0).unwrap(), img);
    }

    #[test]
    fn pad_matches_index_oracle() {
        let img = Image::from_fn(5, 5, |x, y| (y * 5 + x) as f64).unwrap();
        let p = mirror_pad(&img, 2).unwrap();
        // brute-force: walk outward bouncing off the borders
        let bounce = |mut i: i64, n: i64| {
            while i < 0 || i >= n {
                if i < 0 {
                    i = -i;
                }
                if i >= n {
                    i = 2 * (n - 1) - i;
                }
            }
            i
        };
        for py in 0..9i64 {
            for px in 0..9i64 {
                let (sx, sy) = (bounce(px - 2, 5), bounce(py - 2, 5));
                assert_eq!(p.get(0, px as usize, py as usize), (sy * 5 + sx) as f64);
            }
        }
    }

    #[test]
    fn small_images_fold_repeatedly() {
        let img = Image::from_fn(4, 3, |x, y| (y * 4 + x) as f64).unwrap();
        let p = fold_pad(&img, 9);
        let bounce = |mut i: i64, n: i64| {
            while i < 0 || i >= n {
                i = if i < 0 { -i } else { 2 * (n - 1) - i };
            }
            i
        };
        for py in 0..21i64 {
            for px in 0..22i64 {
                let (sx, sy) = (bounce(px - 9, 4), bounce(py - 9, 3));
                assert_eq!(p.get(0, px as usize, py as usize), (sy * 4 + sx) as f64);
            }
        }
        let line = Image::new(1, 2, 1, vec![5.0, 6.0]).unwrap();
        assert!(fold_pad(&line, 3).samples().chunks(7).all(|r| r.iter().all(|&v| v == r[0])));

        let small = Image::from_fn(64, 64, |x, y| ((x * 7 + y * 3) % 11) as f64).unwrap();
        let src = PatchSource::new(&small, None, PatchGeometry::default()).unwrap();
        assert_eq!(src.build(63, 0).unwrap().samples().len(), 3 * 33 * 33);
    }

    #[test]
    fn constant_image_gives_constant_planes() {
        let img = Image::filled(200, 180, 1, 0.75).unwrap();
        let src = PatchSource::new(&img, None, PatchGeometry::default()).unwrap();
        for (x, y) in [(0, 0), (199, 179), (100, 50)] {
            let p = src.build(x, y).unwrap();
            assert_eq!(p.samples().len(), 3 * 33 * 33);
            for v in p.samples() {
                assert!((v - 0.75).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn middle_plane_is_raw_window() {
        let img = random_image(120, 110, 9);
        let src = PatchSource::new(&img, None, PatchGeometry::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..20 {
            let (x, y) = (rng.random_range(16..104), rng.random_range(16..94));
            let p = src.build(x, y).unwrap();
            assert_eq!(p.plane(1)[16 * 33 + 16], img.get(0, x, y));
            for r in 0..33 {
                for c in 0..33 {
                    assert_eq!(p.plane(1)[r * 33 + c], img.get(0, x + c - 16, y + r - 16));
                }
            }
        }
        // and at the very corner, every plane is still 33x33
        let p = src.build(0, 0).unwrap();
        assert_eq!(p.plane(1)[16 * 33 + 16], img.get(0, 0, 0));
    }

    #[test]
    fn out_of_bounds_rejected() {
        let img = random_image(90, 90, 2);
        let src = PatchSource::new(&img, None, PatchGeometry::default()).unwrap();
        assert!(src.build(90, 0).is_err());
        assert!(src.build(0, 90).is_err());
    }

    #[test]
    fn context_plane_sees_the_disc_edge() {
        let (cx, cy) = (120usize, 120usize);
        let img = Image::from_fn(240, 240, |x, y| {
            let (dx, dy) = (x as f64 - cx as f64, y as f64 - cy as f64);
            if dx * dx + dy * dy <= 40.0 * 40.0 { 1.0 } else { 0.0 }
        })
        .unwrap();
        let src = PatchSource::new(&img, None, PatchGeometry::default()).unwrap();
        let p = src.build(cx, cy).unwrap();
        let var = |s: &[f64]| {
            let m = s.iter().sum::<f64>() / s.len() as f64;
            s.iter().map(|v| (v - m).powi(2)).sum::<f64>() / s.len() as f64
        };
        assert!(var(p.plane(0)) < 1e-20);
        assert!(var(p.plane(2)) > 0.05);
        assert!(var(p.plane(2)) > var(p.plane(0)));
    }

    #[test]
    fn separate_context_channel_feeds_only_plane_three() {
        let a = random_image(100, 100, 4);
        let b = Image::filled(100, 100, 1, 3.0).unwrap();
        let src = PatchSource::new(&a, Some(&b), PatchGeometry::default()).unwrap();
        let plain = PatchSource::new(&a, None, PatchGeometry::default()).unwrap();
        let p = src.build(50, 50).unwrap();
        let q = plain.build(50, 50).unwrap();
        assert_eq!(p.plane(0), q.plane(0));
        assert_eq!(p.plane(1), q.plane(1));
        assert!(p.plane(2).iter().all(|v| (v - 3.0).abs() < 1e-12));
    }

    #[test]
    fn build_is_deterministic() {
        let img = random_image(100, 100, 7);
        let src = PatchSource::new(&img, None, PatchGeometry::default()).unwrap();
        let a = src.build(13, 77).unwrap();
        let b = src.build(13, 77).unwrap();
        assert!(a.samples().iter().zip(b.samples()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
}
