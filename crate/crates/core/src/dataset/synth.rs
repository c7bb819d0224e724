//! Synthetic fundus photographs with exact four-class ground truth.
//!
//! A circular field of view holds a bright optic disc, a dark plateau-shaped
//! fovea five disc radii away from it, and tapering dark vessels grown from
//! the disc as smooth random walks that bend around the fovea. Lighting gets a
//! linear gradient and radial fall-off, then Gaussian pixel noise.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::FundusRecord;
use crate::error::{invalid, Result};
use crate::raster::{Class, Image, LabelMap, Mask};

pub const MIN_SYNTH_SIZE: usize = 128;

/// One vessel centreline with a width at every vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct Vessel {
    pub points: Vec<(f64, f64)>,
    pub widths: Vec<f64>,
}

/// Geometry of a synthetic fundus, in pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthScene {
    pub size: usize,
    pub fov_center: (f64, f64),
    pub fov_radius: f64,
    pub disc_center: (f64, f64),
    pub disc_radius: f64,
    pub fovea_center: (f64, f64),
    pub fovea_radius: f64,
    /// Linear lighting gradient direction.
    pub light_angle: f64,
    pub vessels: Vec<Vessel>,
}

fn dist(a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - b.0).hypot(a.1 - b.1)
}

fn wrap(a: f64) -> f64 {
    (a + PI).rem_euclid(TAU) - PI
}

struct Grower<'a> {
    scene: &'a SynthScene,
    rng: &'a mut ChaCha8Rng,
    bend: Normal<f64>,
}

impl Grower<'_> {
    fn grow(&mut self, start: (f64, f64), heading: f64, w0: f64, w1: f64, max_len: usize) -> Vessel {
        let s = self.scene;
        let avoid = 2.2 * s.fovea_radius;
        let (mut pos, mut h, mut curl) = (start, heading, 0.0f64);
        let mut v = Vessel {
            points: Vec::new(),
            widths: Vec::new(),
        };
        for i in 0..max_len {
            if dist(pos, s.fov_center) > s.fov_radius - 1.0 {
                break;
            }
            v.points.push(pos);
            v.widths.push(w0 + (w1 - w0) * i as f64 / max_len as f64);
            curl = (curl + self.bend.sample(self.rng)).clamp(-0.03, 0.03);
            h += curl;
            if dist(pos, s.fovea_center) < avoid {
                let away = (pos.1 - s.fovea_center.1).atan2(pos.0 - s.fovea_center.0);
                let turn = wrap(away - h).clamp(-0.12, 0.12);
                h += turn;
                curl *= 0.5;
            }
            pos = (pos.0 + h.cos(), pos.1 + h.sin());
        }
        v
    }
}

/// Place the anatomy for `seed`.
pub fn synth_scene(seed: u64, size: usize) -> Result<SynthScene> {
    if size < MIN_SYNTH_SIZE {
        return Err(invalid(format!("synthetic images need size >= {MIN_SYNTH_SIZE}, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = size as f64 / 2.0;
    let r = 0.46 * size as f64;
    let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let disc_radius = r * rng.random_range(0.125..0.14);
    let disc_center = (c + side * r * rng.random_range(0.33..0.38), c + r * rng.random_range(-0.08..0.08));
    let tilt: f64 = rng.random_range(-0.12..0.12);
    let sep = 5.0 * disc_radius;
    let fovea_center = (disc_center.0 - side * sep * tilt.cos(), disc_center.1 + sep * tilt.sin());
    let mut scene = SynthScene {
        size,
        fov_center: (c, c),
        fov_radius: r,
        disc_center,
        disc_radius,
        fovea_center,
        fovea_radius: r * rng.random_range(0.115..0.13),
        light_angle: rng.random_range(0.0..TAU),
        vessels: Vec::new(),
    };

    let mut vessels = Vec::new();
    {
        let mut g = Grower {
            scene: &scene,
            rng: &mut rng,
            bend: Normal::new(0.0, 0.004).unwrap(),
        };
        let primaries = 8;
        let offset = g.rng.random_range(0.0..TAU);
        let reach = (2.0 * r) as usize;
        for k in 0..primaries {
            let a = offset + TAU * k as f64 / primaries as f64 + g.rng.random_range(-0.2..0.2);
            let start = (
                disc_center.0 + 0.7 * disc_radius * a.cos(),
                disc_center.1 + 0.7 * disc_radius * a.sin(),
            );
            let w0 = g.rng.random_range(4.0..5.5);
            let trunk = g.grow(start, a, w0, 1.8, reach);
            for _ in 0..2 {
                if trunk.points.len() < 20 {
                    break;
                }
                let at = g.rng.random_range(trunk.points.len() / 4..trunk.points.len() * 7 / 10);
                let prev = trunk.points[at - 1];
                let here = trunk.points[at];
                let heading = (here.1 - prev.1).atan2(here.0 - prev.0);
                let turn = g.rng.random_range(0.4..0.9) * if g.rng.random::<bool>() { 1.0 } else { -1.0 };
                let len = (r * g.rng.random_range(0.4..0.9)) as usize;
                let bw = 0.7 * trunk.widths[at];
                vessels.push(g.grow(here, heading + turn, bw, 1.3, len));
            }
            vessels.push(trunk);
        }
    }
    scene.vessels = vessels;
    Ok(scene)
}

/// Per-pixel fractional vessel coverage; a pixel is a vessel pixel when its
/// centre lies within half a width of the centreline (coverage >= 0.5).
fn vessel_coverage(scene: &SynthScene) -> Vec<f64> {
    let n = scene.size;
    let mut cov = vec![0.0f64; n * n];
    for v in &scene.vessels {
        for i in 0..v.points.len() {
            let (p, w) = (v.points[i], v.widths[i]);
            let (q, wq) = if i + 1 < v.points.len() { (v.points[i + 1], v.widths[i + 1]) } else { (p, w) };
            // two stamps per unit step
            for t in [0.0, 0.5] {
                let c = (p.0 + t * (q.0 - p.0), p.1 + t * (q.1 - p.1));
                let half = 0.5 * (w + t * (wq - w));
                let reach = half + 1.0;
                let x0 = (c.0 - reach).floor().max(0.0) as usize;
                let y0 = (c.1 - reach).floor().max(0.0) as usize;
                let x1 = ((c.0 + reach).ceil() as usize).min(n - 1);
                let y1 = ((c.1 + reach).ceil() as usize).min(n - 1);
                for y in y0..=y1 {
                    for x in x0..=x1 {
                        let d = dist((x as f64, y as f64), c);
                        let k = (half + 0.5 - d).clamp(0.0, 1.0);
                        let slot = &mut cov[y * n + x];
                        *slot = slot.max(k);
                    }
                }
            }
        }
    }
    cov
}

/// Plateau profile: 1 inside `0.75 r`, cosine roll-off to 0 at `1.25 r`,
/// exactly 0.5 at `r`.
fn fovea_profile(d: f64, r: f64) -> f64 {
    let t = (d - 0.75 * r) / (0.5 * r);
    if t <= 0.0 {
        1.0
    } else if t >= 1.0 {
        0.0
    } else {
        0.5 * (1.0 + (PI * t).cos())
    }
}

/// Draw the image, mask and exact truth for a scene.
pub fn render_scene(scene: &SynthScene, id: &str, noise_seed: u64) -> Result<FundusRecord> {
    let n = scene.size;
    let cov = vessel_coverage(scene);
    let mut rng = ChaCha8Rng::seed_from_u64(noise_seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, 0.015).unwrap();
    let mask = Mask::from_fn(n, n, |x, y| dist((x as f64, y as f64), scene.fov_center) <= scene.fov_radius);
    let mut labels = LabelMap::background(n, n);
    let mut planes = [vec![0.0; n * n], vec![0.0; n * n], vec![0.0; n * n]];
    let (lc, ls) = (scene.light_angle.cos(), scene.light_angle.sin());
    for y in 0..n {
        for x in 0..n {
            let i = y * n + x;
            let p = (x as f64, y as f64);
            if !mask.get(x, y) {
                for plane in &mut planes {
                    plane[i] = 0.02;
                }
                continue;
            }
            let rho = dist(p, scene.fov_center) / scene.fov_radius;
            let along = ((p.0 - scene.fov_center.0) * lc + (p.1 - scene.fov_center.1) * ls) / scene.fov_radius;
            let light = 1.0 + 0.15 * along - 0.18 * rho * rho;

            let dd = dist(p, scene.disc_center);
            let disc = ((scene.disc_radius + 1.0 - dd) / 2.0).clamp(0.0, 1.0);
            let df = dist(p, scene.fovea_center);
            let fovea = fovea_profile(df, scene.fovea_radius);
            let vessel = cov[i];

            let mut rgb = [0.78, 0.38, 0.14];
            let tint = [[0.15, 0.30, 0.15], [-0.06, -0.07, -0.02], [-0.10, -0.17, -0.04]];
            for (ch, v) in rgb.iter_mut().enumerate() {
                *v += tint[0][ch] * disc + tint[1][ch] * fovea + tint[2][ch] * vessel;
            }
            for (plane, v) in planes.iter_mut().zip(rgb) {
                plane[i] = (v * light + noise.sample(&mut rng)).clamp(0.0, 1.0);
            }

            let class = if vessel >= 0.5 {
                Class::Vessel
            } else if dd <= scene.disc_radius {
                Class::OpticDisc
            } else if df <= scene.fovea_radius {
                Class::Fovea
            } else {
                Class::Background
            };
            labels.set(x, y, class);
        }
    }
    let [r, g, b] = planes;
    let image = Image::new(n, n, 3, [r, g, b].concat())?;
    FundusRecord::new(id, image, mask, Some(labels))
}

/// A complete synthetic record; the id is `synth_<seed>`.
pub fn synth_fundus(seed: u64, size: usize) -> Result<FundusRecord> {
    let scene = synth_scene(seed, size)?;
    render_scene(&scene, &format!("synth_{seed}"), seed)
}
