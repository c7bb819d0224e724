//! sRGB <-> CIE 1976 L*u*v* with a D65 white.

use crate::error::Result;
use crate::raster::Image;

/// Linear sRGB primaries to XYZ (D65).
const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

// CIE constants: (6/29)^3 and (29/3)^3.
const EPSILON: f64 = 216.0 / 24389.0;
const KAPPA: f64 = 24389.0 / 27.0;

struct Colorimetry {
    xyz_to_rgb: [[f64; 3]; 3],
    white: [f64; 3],
    white_u: f64,
    white_v: f64,
}

impl Colorimetry {
    fn new() -> Self {
        // White is the image of RGB (1,1,1) so that it lands on L=100, u=v=0 exactly.
        let white = mat_vec(&RGB_TO_XYZ, [1.0, 1.0, 1.0]);
        let (white_u, white_v) = chromaticity(white);
        Colorimetry {
            xyz_to_rgb: invert3(&RGB_TO_XYZ),
            white,
            white_u,
            white_v,
        }
    }

    fn rgb_to_luv(&self, rgb: [f64; 3]) -> [f64; 3] {
        let lin = [linearize(rgb[0]), linearize(rgb[1]), linearize(rgb[2])];
        let xyz = mat_vec(&RGB_TO_XYZ, lin);
        let yr = xyz[1] / self.white[1];
        let l = if yr > EPSILON { 116.0 * yr.cbrt() - 16.0 } else { KAPPA * yr };
        let denom = xyz[0] + 15.0 * xyz[1] + 3.0 * xyz[2];
        if denom <= 0.0 || l <= 0.0 {
            return [0.0, 0.0, 0.0];
        }
        let (u, v) = chromaticity(xyz);
        [l, 13.0 * l * (u - self.white_u), 13.0 * l * (v - self.white_v)]
    }

    fn luv_to_rgb(&self, luv: [f64; 3]) -> [f64; 3] {
        let l = luv[0];
        if l <= 0.0 {
            return [0.0, 0.0, 0.0];
        }
        let y = if l > KAPPA * EPSILON {
            ((l + 16.0) / 116.0).powi(3)
        } else {
            l / KAPPA
        } * self.white[1];
        let u = luv[1] / (13.0 * l) + self.white_u;
        let v = luv[2] / (13.0 * l) + self.white_v;
        if v <= 0.0 {
            return [0.0, 0.0, 0.0];
        }
        let x = y * 9.0 * u / (4.0 * v);
        let z = y * (12.0 - 3.0 * u - 20.0 * v) / (4.0 * v);
        let lin = mat_vec(&self.xyz_to_rgb, [x, y, z]);
        [
            encode(lin[0]).clamp(0.0, 1.0),
            encode(lin[1]).clamp(0.0, 1.0),
            encode(lin[2]).clamp(0.0, 1.0),
        ]
    }
}

fn chromaticity(xyz: [f64; 3]) -> (f64, f64) {
    let d = xyz[0] + 15.0 * xyz[1] + 3.0 * xyz[2];
    (4.0 * xyz[0] / d, 9.0 * xyz[1] / d)
}

fn linearize(c: f64) -> f64 {
    if c <= 0.040_45 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn encode(c: f64) -> f64 {
    if c <= 0.003_130_8 {
        12.92 * c
    } else {
        1.055 * c.powf(1.0 / 2.4) - 0.055
    }
}

fn mat_vec(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let cof = [
        [c(1, 2, 1, 2), -c(1, 2, 0, 2), c(1, 2, 0, 1)],
        [-c(0, 2, 1, 2), c(0, 2, 0, 2), -c(0, 2, 0, 1)],
        [c(0, 1, 1, 2), -c(0, 1, 0, 2), c(0, 1, 0, 1)],
    ];
    let det = m[0][0] * cof[0][0] + m[0][1] * cof[0][1] + m[0][2] * cof[0][2];
    let mut inv = [[0.0; 3]; 3];
    for (i, row) in inv.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = cof[j][i] / det;
        }
    }
    inv
}

fn map_pixels(img: &Image, f: impl Fn([f64; 3]) -> [f64; 3]) -> Result<Image> {
    let n = img.width() * img.height();
    let mut out = img.clone();
    let s = out.samples_mut();
    for i in 0..n {
        let px = f([s[i], s[n + i], s[2 * n + i]]);
        s[i] = px[0];
        s[n + i] = px[1];
        s[2 * n + i] = px[2];
    }
    Ok(out)
}

/// Convert an sRGB image with samples in `[0,1]` to L*u*v*.
pub fn rgb_to_luv(img: &Image) -> Result<Image> {
    img.require_channels(3, "rgb_to_luv")?;
    let cm = Colorimetry::new();
    map_pixels(img, |p| cm.rgb_to_luv(p))
}

/// Convert L*u*v* back to sRGB, clamping out-of-gamut samples to `[0,1]`.
pub fn luv_to_rgb(img: &Image) -> Result<Image> {
    img.require_channels(3, "luv_to_rgb")?;
    let cm = Colorimetry::new();
    map_pixels(img, |p| cm.luv_to_rgb(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn px(r: f64, g: f64, b: f64) -> Image {
        Image::new(1, 1, 3, vec![r, g, b]).unwrap()
    }

    #[test]
    fn black_and_white_are_fixed_points() {
        let black = rgb_to_luv(&px(0.0, 0.0, 0.0)).unwrap();
        assert_eq!(black.samples(), &[0.0, 0.0, 0.0]);

        let white = rgb_to_luv(&px(1.0, 1.0, 1.0)).unwrap();
        let s = white.samples();
        assert!((s[0] - 100.0).abs() < 1e-12, "L = {}", s[0]);
        assert!(s[1].abs() < 1e-12 && s[2].abs() < 1e-12);
    }

    #[test]
    fn frozen_colorimetry_values() {
        // Evaluated with 30-digit arithmetic over the same matrix and white.
        let cases = [
            ([0.5, 0.5, 0.5], [53.388_964_741_114_306, 0.0, 0.0]),
            ([0.2, 0.6, 0.9], [60.929_731_908_242_761, -34.758_883_029_634_167, -74.149_781_894_135_246]),
            ([0.8, 0.3, 0.1], [49.679_720_255_290_221, 103.880_126_155_186_40, 39.024_336_642_558_681]),
        ];
        for (rgb, want) in cases {
            let got = rgb_to_luv(&px(rgb[0], rgb[1], rgb[2])).unwrap();
            for (g, w) in got.samples().iter().zip(want) {
                assert!((g - w).abs() < 1e-6, "{rgb:?}: {g} vs {w}");
            }
        }
    }

    #[test]
    fn inverse_special_points() {
        assert_eq!(luv_to_rgb(&px(0.0, 12.0, -3.0)).unwrap().samples(), &[0.0, 0.0, 0.0]);
        let w = luv_to_rgb(&px(100.0, 0.0, 0.0)).unwrap();
        for s in w.samples() {
            assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn out_of_gamut_is_clamped() {
        let rgb = luv_to_rgb(&px(50.0, 170.0, 100.0)).unwrap();
        assert!(rgb.samples().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn wrong_channel_count_rejected() {
        let gray = Image::filled(2, 2, 1, 0.5).unwrap();
        assert!(rgb_to_luv(&gray).is_err());
        assert!(luv_to_rgb(&gray).is_err());
    }
}
