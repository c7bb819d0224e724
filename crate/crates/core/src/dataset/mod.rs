//! Fundus records: DRIVE-layout and flat directory loaders, truth
//! composition and synthetic data.
//!
//! DRIVE layout, after converting the TIFF/GIF originals to PPM/PGM:
//!
//! ```text
//! <root>/training/images/21_training.ppm
//! <root>/training/mask/21_training_mask.pgm
//! <root>/training/1st_manual/21_manual1.pgm
//! <root>/training/od_fovea/21_od_fovea.pgm     optional; 0 none, 1 disc, 2 fovea
//! <root>/test/...                              same, with 01_test.ppm etc.
//! ```
//!
//! Flat layout: `<id>.ppm`, `<id>_mask.pgm` and optionally `<id>_truth.pgm`
//! holding class ids.

pub mod pnm;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::raster::{Class, Image, LabelMap, Mask};

pub use pnm::{read_labels, read_mask, read_ppm, write_labels, write_mask, write_ppm};
pub use synth::{render_scene, synth_fundus, synth_scene, SynthScene, Vessel, MIN_SYNTH_SIZE};

#[derive(Debug, Clone, PartialEq)]
pub struct FundusRecord {
    pub id: String,
    pub image: Image,
    pub mask: Mask,
    pub truth: Option<LabelMap>,
}

impl FundusRecord {
    /// Checks that the image is colour and every raster has the same size.
    pub fn new(id: impl Into<String>, image: Image, mask: Mask, truth: Option<LabelMap>) -> Result<Self> {
        let id = id.into();
        let fail = |reason: String| Error::Consistency { id: id.clone(), reason };
        if image.channels() != 3 {
            return Err(fail(format!("image has {} channels, expected 3", image.channels())));
        }
        if mask.dims() != image.dims() {
            return Err(fail(format!("mask is {:?} but image is {:?}", mask.dims(), image.dims())));
        }
        if let Some(t) = &truth {
            if t.dims() != image.dims() {
                return Err(fail(format!("truth is {:?} but image is {:?}", t.dims(), image.dims())));
            }
        }
        Ok(FundusRecord { id, image, mask, truth })
    }

    pub fn dims(&self) -> (usize, usize) {
        self.image.dims()
    }
}

/// Four-class truth from binary layers. Where layers overlap, vessels win
/// over the optic disc, which wins over the fovea.
pub fn compose_truth(vessels: &Mask, disc: &Mask, fovea: &Mask) -> Result<LabelMap> {
    let dims = vessels.dims();
    disc.require_dims(dims, "compose_truth (optic disc)")?;
    fovea.require_dims(dims, "compose_truth (fovea)")?;
    let labels = vessels
        .flags()
        .iter()
        .zip(disc.flags())
        .zip(fovea.flags())
        .map(|((&v, &d), &f)| {
            if v {
                Class::Vessel
            } else if d {
                Class::OpticDisc
            } else if f {
                Class::Fovea
            } else {
                Class::Background
            }
        })
        .collect();
    LabelMap::new(dims.0, dims.1, labels)
}

/// Split an optic disc / fovea region raster (0 none, 1 disc, 2 fovea).
pub fn region_layers(path: &Path) -> Result<(Mask, Mask)> {
    let p = pnm::read_pgm(path)?;
    if let Some(v) = p.data.iter().find(|&&v| v > 2) {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: format!("region value {v} is not 0, 1 or 2"),
        });
    }
    let disc = Mask::new(p.width, p.height, p.data.iter().map(|&v| v == 1).collect())?;
    let fovea = Mask::new(p.width, p.height, p.data.iter().map(|&v| v == 2).collect())?;
    Ok((disc, fovea))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "training",
            Split::Test => "test",
        }
    }
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::Load {
        path: dir.to_path_buf(),
        reason: e.to_string(),
    })?;
    let mut files = Vec::new();
    for e in entries {
        let p = e?.path();
        if p.is_file() && p.extension().is_some_and(|x| x == ext) {
            files.push(p);
        }
    }
    files.sort();
    Ok(files)
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Load one split of a DRIVE-layout tree. Records carry a truth map only when
/// the vessel annotation exists; disc and fovea come from `od_fovea/` when
/// present and are otherwise left as background.
pub fn load_drive(root: impl AsRef<Path>, split: Split) -> Result<Vec<FundusRecord>> {
    let base = root.as_ref().join(split.dir_name());
    let images = sorted_files(&base.join("images"), "ppm")?;
    if images.is_empty() {
        return Err(Error::Load {
            path: base.join("images"),
            reason: "no .ppm images found".into(),
        });
    }
    let mut records = Vec::with_capacity(images.len());
    for path in images {
        let name = stem(&path);
        let number = name.split('_').next().unwrap_or(&name).to_string();
        let image = read_ppm(&path)?;
        let mask = read_mask(base.join("mask").join(format!("{name}_mask.pgm")))?;
        let manual = base.join("1st_manual").join(format!("{number}_manual1.pgm"));
        let truth = if manual.exists() {
            let vessels = read_mask(&manual)?;
            let regions = base.join("od_fovea").join(format!("{number}_od_fovea.pgm"));
            let (disc, fovea) = if regions.exists() {
                region_layers(&regions)?
            } else {
                let (w, h) = vessels.dims();
                (Mask::empty(w, h), Mask::empty(w, h))
            };
            if vessels.dims() != image.dims() || disc.dims() != image.dims() {
                return Err(Error::Consistency {
                    id: number.clone(),
                    reason: format!("annotation size differs from image {:?}", image.dims()),
                });
            }
            let mut t = compose_truth(&vessels, &disc, &fovea)?;
            t.restrict_to(&mask)
                .map_err(|e| Error::Consistency { id: number.clone(), reason: e.to_string() })?;
            Some(t)
        } else {
            None
        };
        records.push(FundusRecord::new(number, image, mask, truth)?);
    }
    Ok(records)
}

/// Load every `<id>.ppm` of a flat directory with its `<id>_mask.pgm` and,
/// when present, `<id>_truth.pgm`.
pub fn load_flat(dir: impl AsRef<Path>) -> Result<Vec<FundusRecord>> {
    let dir = dir.as_ref();
    let images = sorted_files(dir, "ppm")?;
    if images.is_empty() {
        return Err(Error::Load {
            path: dir.to_path_buf(),
            reason: "no .ppm images found".into(),
        });
    }
    images
        .iter()
        .map(|path| {
            let id = stem(path);
            let image = read_ppm(path)?;
            let mask = read_mask(dir.join(format!("{id}_mask.pgm")))?;
            let truth_path = dir.join(format!("{id}_truth.pgm"));
            let truth = if truth_path.exists() { Some(read_labels(&truth_path)?) } else { None };
            FundusRecord::new(id, image, mask, truth)
        })
        .collect()
}

/// Write a record in the flat layout; returns the files written.
pub fn write_flat(dir: impl AsRef<Path>, record: &FundusRecord) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let id = &record.id;
    let mut written = vec![dir.join(format!("{id}.ppm")), dir.join(format!("{id}_mask.pgm"))];
    write_ppm(&written[0], &record.image)?;
    write_mask(&written[1], &record.mask)?;
    if let Some(t) = &record.truth {
        let p = dir.join(format!("{id}_truth.pgm"));
        write_labels(&p, t)?;
        written.push(p);
    }
    Ok(written)
}
