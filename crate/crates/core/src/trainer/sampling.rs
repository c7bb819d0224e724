use rand::seq::{index, SliceRandom};
use rand::Rng;

use super::{stream_rng, Pools, TrainSample, STREAM_SAMPLING};
use crate::error::{invalid, Result};
use crate::raster::{Class, NUM_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selection {
    /// Uniform draw without replacement.
    Subsample,
    /// The whole pool plus a with-replacement top-up.
    Oversample,
}

/// Per-class target counts, indexed by class id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SamplePlan {
    targets: [usize; NUM_CLASSES],
}

impl SamplePlan {
    pub fn new(targets: [usize; NUM_CLASSES]) -> Result<Self> {
        if let Some(c) = targets.iter().position(|&t| t == 0) {
            return Err(invalid(format!("sample target for {} must be positive", Class::ALL[c])));
        }
        Ok(SamplePlan { targets })
    }

    /// 300,000 background and 150,000 of every other class.
    pub fn full_scale() -> Self {
        SamplePlan {
            targets: [300_000, 150_000, 150_000, 150_000],
        }
    }

    pub fn targets(&self) -> [usize; NUM_CLASSES] {
        self.targets
    }

    pub fn total(&self) -> usize {
        self.targets.iter().sum()
    }

    pub fn selection(&self, c: Class, pool_len: usize) -> Selection {
        if pool_len >= self.targets[c.index()] {
            Selection::Subsample
        } else {
            Selection::Oversample
        }
    }
}

/// Draw the training set. Deterministic in `seed`.
pub fn stratified_sample(pools: &Pools, plan: &SamplePlan, seed: u64) -> Result<Vec<TrainSample>> {
    if let Some(c) = pools.iter().position(|p| p.is_empty()) {
        return Err(invalid(format!("no {} points available for sampling", Class::ALL[c])));
    }
    let mut rng = stream_rng(seed, STREAM_SAMPLING);
    let mut out = Vec::with_capacity(plan.total());
    for c in Class::ALL {
        let pool = &pools[c.index()];
        let target = plan.targets[c.index()];
        match plan.selection(c, pool.len()) {
            Selection::Subsample => {
                out.extend(index::sample(&mut rng, pool.len(), target).into_iter().map(|i| pool[i]));
            }
            Selection::Oversample => {
                out.extend_from_slice(pool);
                out.extend((pool.len()..target).map(|_| pool[rng.random_range(0..pool.len())]));
            }
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}
