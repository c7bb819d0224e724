//! From a fundus record to network inputs, and from a network to a label map.

use rayon::prelude::*;

use crate::cnn::{argmax, Cnn, Trace};
use crate::error::{Error, Result};
use crate::imagenorm::{normalize_fundus, standardize_channel, DEFAULT_WINDOW};
use crate::patch::{effective_points, PatchGeometry, PatchScratch, PatchSource};
use crate::raster::{Class, Image, LabelMap, Mask};
use crate::trainer::{Pools, TrainSample};

/// Which image feeds the coarse (third) input plane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContextSource {
    /// The standardized green channel of the normalized image.
    #[default]
    Normalized,
    /// The standardized green channel of the image before normalization.
    Original,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PrepareOptions {
    pub window: usize,
    pub geometry: PatchGeometry,
    pub context: ContextSource,
}

impl Default for PrepareOptions {
    fn default() -> Self {
        PrepareOptions {
            window: DEFAULT_WINDOW,
            geometry: PatchGeometry::default(),
            context: ContextSource::Normalized,
        }
    }
}

pub struct Prepared {
    pub normalized: Image,
    pub source: PatchSource,
}

/// Normalize lighting, standardize the green channel and set up patch
/// extraction for one image.
pub fn prepare(image: &Image, mask: &Mask, opts: &PrepareOptions) -> Result<Prepared> {
    let normalized = normalize_fundus(image, mask, opts.window)?;
    let green = standardize_channel(&normalized.channel(1), mask)?;
    let context = match opts.context {
        ContextSource::Normalized => None,
        ContextSource::Original => Some(standardize_channel(&image.channel(1), mask)?),
    };
    let source = PatchSource::new(&green, context.as_ref(), opts.geometry)?;
    Ok(Prepared { normalized, source })
}

/// Effective points of `truth` grouped by class, in row-major order.
pub fn class_pools(truth: &LabelMap, mask: &Mask, image: usize) -> Result<Pools> {
    mask.require_dims(truth.dims(), "class_pools")?;
    let mut pools: Pools = Default::default();
    for (x, y) in effective_points(mask) {
        let c = truth.get(x, y);
        pools[c.index()].push(TrainSample::new(image, x, y, c));
    }
    Ok(pools)
}

/// Concatenate per-image pools, keeping image order.
pub fn merge_pools(parts: impl IntoIterator<Item = Pools>) -> Pools {
    let mut all: Pools = Default::default();
    for p in parts {
        for (a, b) in all.iter_mut().zip(p) {
            a.extend(b);
        }
    }
    all
}

/// Points per parallel work item. Fixed so results never depend on the
/// worker count.
pub const SEGMENT_CHUNK: usize = 512;

fn check_wiring(net: &Cnn, source: &PatchSource) -> Result<()> {
    let g = net.geometry();
    let pg = source.geometry();
    if g.towers != 3 || g.input != pg.size {
        return Err(Error::Shape(format!(
            "network takes {} planes of {}x{}, patches are 3 planes of {}x{}",
            g.towers, g.input, g.input, pg.size, pg.size
        )));
    }
    Ok(())
}

/// Classify every effective point; everything else is background.
pub fn segment(net: &Cnn, source: &PatchSource, mask: &Mask) -> Result<LabelMap> {
    check_wiring(net, source)?;
    mask.require_dims(source.dims(), "segment")?;
    let points = effective_points(mask);
    let g = net.geometry();
    let classes = points
        .par_chunks(SEGMENT_CHUNK)
        .map_init(
            || (Trace::new(&g), vec![0.0; g.input_len()], PatchScratch::default()),
            |(trace, input, scratch), chunk| -> Result<Vec<Class>> {
                chunk
                    .iter()
                    .map(|&(x, y)| {
                        source.build_into(x, y, input, scratch)?;
                        let k = argmax(net.forward_with(input, trace)?);
                        Class::from_id(k as u8).ok_or_else(|| Error::Shape(format!("network emitted class {k}")))
                    })
                    .collect()
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let (w, h) = mask.dims();
    let mut labels = LabelMap::background(w, h);
    for (&(x, y), c) in points.iter().zip(classes.into_iter().flatten()) {
        labels.set(x, y, c);
    }
    Ok(labels)
}

/// Prepare and segment in one go. An empty mask yields all background
/// without touching the network.
pub fn segment_image(net: &Cnn, image: &Image, mask: &Mask, opts: &PrepareOptions) -> Result<LabelMap> {
    mask.require_dims(image.dims(), "segment_image")?;
    if mask.count() == 0 {
        return Ok(LabelMap::background(image.width(), image.height()));
    }
    let prepared = prepare(image, mask, opts)?;
    segment(net, &prepared.source, mask)
}

/// Overlay tints: vessels red, optic disc yellow, fovea cyan.
pub const PALETTE: [[f64; 3]; 4] = [[0.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 1.0], [1.0, 0.0, 0.0]];

/// Blend each labelled pixel half-way towards its class colour; background
/// stays as it is.
pub fn overlay(image: &Image, labels: &LabelMap) -> Result<Image> {
    image.require_channels(3, "overlay")?;
    if image.dims() != labels.dims() {
        return Err(Error::Shape(format!("labels {:?} do not match image {:?}", labels.dims(), image.dims())));
    }
    let mut out = image.clone();
    let n = image.width() * image.height();
    for (i, &c) in labels.labels().iter().enumerate() {
        if c == Class::Background {
            continue;
        }
        for ch in 0..3 {
            let s = &mut out.samples_mut()[ch * n + i];
            *s = 0.5 * *s + 0.5 * PALETTE[c.index()][ch];
        }
    }
    Ok(out)
}
