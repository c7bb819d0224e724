//! Stratified sample selection, mini-batch SGD with weight decay coupled to
//! the training-set size, strided per-epoch evaluation and best-epoch
//! selection.

mod sampling;
mod select;
mod sgd;
#[cfg(test)]
mod tests;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Result};
use crate::patch::{PatchScratch, PatchSource};
use crate::raster::{Class, NUM_CLASSES};

pub use sampling::{stratified_sample, Selection, SamplePlan};
pub use select::{best_epoch, checkpoint_path, read_log, train_select, write_log, EpochRecord, TrainOutcome, TrainState, LOG_HEADER};
pub use sgd::{apply_update, epoch_eval, eval_points, run_epoch, sgd_step, BatchWorkspace, EvalResult};

/// RNG streams; one seed drives every random choice of a run.
const STREAM_SAMPLING: u64 = 1;
const STREAM_EPOCH_BASE: u64 = 16;

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Shuffle RNG for 1-based `epoch`. Independent of earlier epochs, so a
/// resumed run replays exactly.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    stream_rng(seed, STREAM_EPOCH_BASE + epoch as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyperparams {
    pub eta: f64,
    pub lambda: f64,
    pub kappa: usize,
    /// Number of selected training samples.
    pub phi: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            eta: 0.01,
            lambda: 0.1,
            kappa: 10,
            phi: 750_000,
            epochs: 40,
            seed: 0,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.eta)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(invalid(format!("regularization must be non-negative, got {}", self.lambda)));
        }
        if self.kappa == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if self.phi < self.kappa {
            return Err(invalid(format!("{} training samples cannot fill a batch of {}", self.phi, self.kappa)));
        }
        Ok(())
    }

    /// Per-step weight multiplier `1 - eta * lambda / phi`.
    pub fn decay(&self) -> f64 {
        1.0 - self.eta * self.lambda / self.phi as f64
    }
}

/// One labelled pixel of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrainSample {
    pub image: u32,
    pub x: u32,
    pub y: u32,
    pub label: Class,
}

impl TrainSample {
    pub fn new(image: usize, x: usize, y: usize, label: Class) -> Self {
        TrainSample {
            image: image as u32,
            x: x as u32,
            y: y as u32,
            label,
        }
    }
}

/// Per-class sample pools.
pub type Pools = [Vec<TrainSample>; NUM_CLASSES];

/// Anything that can write the network input for a sample.
pub trait SampleInputs: Sync {
    fn input_len(&self) -> usize;

    fn write(&self, sample: &TrainSample, out: &mut [f64], scratch: &mut PatchScratch) -> Result<()>;
}

/// Patches built on demand; `sample.image` indexes the slice.
impl SampleInputs for [PatchSource] {
    fn input_len(&self) -> usize {
        self.first().map_or(0, |s| s.geometry().input_len())
    }

    fn write(&self, s: &TrainSample, out: &mut [f64], scratch: &mut PatchScratch) -> Result<()> {
        let src = self
            .get(s.image as usize)
            .ok_or_else(|| invalid(format!("sample refers to image {} of {}", s.image, self.len())))?;
        src.build_into(s.x as usize, s.y as usize, out, scratch)
    }
}

impl SampleInputs for Vec<PatchSource> {
    fn input_len(&self) -> usize {
        self.as_slice().input_len()
    }

    fn write(&self, s: &TrainSample, out: &mut [f64], scratch: &mut PatchScratch) -> Result<()> {
        self.as_slice().write(s, out, scratch)
    }
}

/// Fixed input vectors; `sample.image` is the row index.
#[derive(Debug, Clone)]
pub struct PrecomputedInputs {
    len: usize,
    rows: Vec<f64>,
}

impl PrecomputedInputs {
    pub fn new(len: usize, rows: Vec<f64>) -> Result<Self> {
        if len == 0 || rows.len() % len != 0 {
            return Err(invalid(format!("{} samples do not split into rows of {len}", rows.len())));
        }
        Ok(PrecomputedInputs { len, rows })
    }

    pub fn rows(&self) -> usize {
        self.rows.len() / self.len
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.len..(i + 1) * self.len]
    }
}

impl SampleInputs for PrecomputedInputs {
    fn input_len(&self) -> usize {
        self.len
    }

    fn write(&self, s: &TrainSample, out: &mut [f64], _: &mut PatchScratch) -> Result<()> {
        let i = s.image as usize;
        if i >= self.rows() {
            return Err(invalid(format!("sample refers to row {i} of {}", self.rows())));
        }
        out.copy_from_slice(self.row(i));
        Ok(())
    }
}
