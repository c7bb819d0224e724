//! Planar rasters shared by every stage of the pipeline.

use std::fmt;

use crate::error::{invalid, Error, Result};

/// Number of segmentation classes.
pub const NUM_CLASSES: usize = 4;

/// Segmentation classes, numbered in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Class {
    Background = 0,
    OpticDisc = 1,
    Fovea = 2,
    Vessel = 3,
}

impl Class {
    pub const ALL: [Class; NUM_CLASSES] = [
        Class::Background,
        Class::OpticDisc,
        Class::Fovea,
        Class::Vessel,
    ];

    pub fn from_id(id: u8) -> Option<Class> {
        Class::ALL.get(id as usize).copied()
    }

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::OpticDisc => "optic disc",
            Class::Fovea => "fovea",
            Class::Vessel => "vessels",
        }
    }
}

impl fmt::Display for Class {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Multi-channel raster of `f64` samples. Planes are stored one after
/// another, each plane row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    samples: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, samples: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(invalid(format!("image must be non-empty, got {width}x{height}")));
        }
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("image must have 1 or 3 channels, got {channels}")));
        }
        if samples.len() != width * height * channels {
            return Err(invalid(format!(
                "expected {} samples for {width}x{height}x{channels}, got {}",
                width * height * channels,
                samples.len()
            )));
        }
        Ok(Image {
            width,
            height,
            channels,
            samples,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        Image::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Build a single-channel image from a function of (x, y).
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        Image::new(width, height, 1, samples)
    }

    /// Stack three single-channel planes into one color image.
    pub fn from_planes(planes: [&Image; 3]) -> Result<Self> {
        let (w, h) = planes[0].dims();
        let mut samples = Vec::with_capacity(w * h * 3);
        for p in planes {
            if p.dims() != (w, h) || p.channels != 1 {
                return Err(Error::Shape("planes must be single-channel and equally sized".into()));
            }
            samples.extend_from_slice(&p.samples);
        }
        Image::new(w, h, 3, samples)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [f64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<f64> {
        self.samples
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.width * self.height;
        &self.samples[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.width * self.height;
        &mut self.samples[c * n..(c + 1) * n]
    }

    /// Copy one plane out as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            samples: self.plane(c).to_vec(),
        }
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize) -> f64 {
        self.samples[(c * self.height + y) * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, c: usize, x: usize, y: usize, v: f64) {
        self.samples[(c * self.height + y) * self.width + x] = v;
    }

    pub(crate) fn require_channels(&self, n: usize, what: &str) -> Result<()> {
        if self.channels != n {
            return Err(invalid(format!("{what} needs a {n}-channel image, got {}", self.channels)));
        }
        Ok(())
    }
}

/// Field-of-view mask; `true` marks an effective fundus point.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    width: usize,
    height: usize,
    flags: Vec<bool>,
}

impl Mask {
    pub fn new(width: usize, height: usize, flags: Vec<bool>) -> Result<Self> {
        if flags.len() != width * height {
            return Err(invalid(format!(
                "mask of {width}x{height} needs {} flags, got {}",
                width * height,
                flags.len()
            )));
        }
        Ok(Mask {
            width,
            height,
            flags,
        })
    }

    pub fn full(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            flags: vec![true; width * height],
        }
    }

    pub fn empty(width: usize, height: usize) -> Self {
        Mask {
            width,
            height,
            flags: vec![false; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut flags = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                flags.push(f(x, y));
            }
        }
        Mask {
            width,
            height,
            flags,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn flags(&self) -> &[bool] {
        &self.flags
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.flags[y * self.width + x]
    }

    pub fn count(&self) -> usize {
        self.flags.iter().filter(|&&f| f).count()
    }

    pub(crate) fn require_dims(&self, dims: (usize, usize), what: &str) -> Result<()> {
        if self.dims() != dims {
            return Err(Error::Shape(format!(
                "{what}: mask is {}x{} but raster is {}x{}",
                self.width, self.height, dims.0, dims.1
            )));
        }
        Ok(())
    }
}

/// Per-pixel class ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    labels: Vec<Class>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, labels: Vec<Class>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(invalid(format!(
                "label map of {width}x{height} needs {} labels, got {}",
                width * height,
                labels.len()
            )));
        }
        Ok(LabelMap {
            width,
            height,
            labels,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        LabelMap {
            width,
            height,
            labels: vec![Class::Background; width * height],
        }
    }

    /// Decode raw ids; any id outside 0..=3 is rejected.
    pub fn from_ids(width: usize, height: usize, ids: &[u8]) -> Result<Self> {
        let labels = ids
            .iter()
            .enumerate()
            .map(|(i, &id)| {
                Class::from_id(id).ok_or_else(|| invalid(format!("label id {id} at pixel {i} is not a class")))
            })
            .collect::<Result<Vec<_>>>()?;
        LabelMap::new(width, height, labels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn labels(&self) -> &[Class] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Class {
        self.labels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: Class) {
        self.labels[y * self.width + x] = c;
    }

    pub fn ids(&self) -> Vec<u8> {
        self.labels.iter().map(|c| c.id()).collect()
    }

    /// Pixel count per class.
    pub fn histogram(&self) -> [usize; NUM_CLASSES] {
        let mut h = [0; NUM_CLASSES];
        for c in &self.labels {
            h[c.index()] += 1;
        }
        h
    }

    /// Force every pixel outside `mask` to background.
    pub fn restrict_to(&mut self, mask: &Mask) -> Result<()> {
        mask.require_dims(self.dims(), "restrict_to")?;
        for (l, &m) in self.labels.iter_mut().zip(mask.flags()) {
            if !m {
                *l = Class::Background;
            }
        }
        Ok(())
    }
}
