use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{Hyperparams, Pools, SampleInputs, TrainSample};
use crate::cnn::{argmax, Cnn, Geometry, Params, Trace};
use crate::error::{Error, Result};
use crate::patch::{PatchInput, PatchScratch};
use crate::raster::{Class, NUM_CLASSES};

struct Slot {
    trace: Trace,
    grads: Params,
    input: Vec<f64>,
    scratch: PatchScratch,
    loss: f64,
}

/// Per-sample buffers for one batch, reused across steps.
pub struct BatchWorkspace {
    geometry: Geometry,
    slots: Vec<Slot>,
    total: Params,
}

impl BatchWorkspace {
    pub fn new(geometry: &Geometry, kappa: usize) -> Self {
        let slot = || Slot {
            trace: Trace::new(geometry),
            grads: Params::zeros(geometry),
            input: vec![0.0; geometry.input_len()],
            scratch: PatchScratch::default(),
            loss: 0.0,
        };
        BatchWorkspace {
            geometry: *geometry,
            slots: (0..kappa).map(|_| slot()).collect(),
            total: Params::zeros(geometry),
        }
    }

    /// Summed gradient of the last batch.
    pub fn gradient(&self) -> &Params {
        &self.total
    }

    fn ensure(&mut self, net: &Cnn, n: usize) {
        if self.geometry != net.geometry() {
            *self = BatchWorkspace::new(&net.geometry(), n);
        }
        while self.slots.len() < n {
            let g = self.geometry;
            self.slots.push(Slot {
                trace: Trace::new(&g),
                grads: Params::zeros(&g),
                input: vec![0.0; g.input_len()],
                scratch: PatchScratch::default(),
                loss: 0.0,
            });
        }
    }

    /// Per-sample gradients in parallel, then summed in batch order so the
    /// result does not depend on the worker count. Returns the summed loss.
    fn accumulate<W>(&mut self, net: &Cnn, n: usize, write: W) -> Result<f64>
    where
        W: Fn(usize, &mut [f64], &mut PatchScratch) -> Result<Class> + Sync,
    {
        self.ensure(net, n);
        self.slots[..n].par_iter_mut().enumerate().try_for_each(|(i, slot)| -> Result<()> {
            let label = write(i, &mut slot.input, &mut slot.scratch)?;
            slot.grads.fill(0.0);
            net.forward_with(&slot.input, &mut slot.trace)?;
            slot.loss = net.backward(&mut slot.trace, label.index(), &mut slot.grads)?.value;
            Ok(())
        })?;
        self.total.fill(0.0);
        let mut loss = 0.0;
        for slot in &self.slots[..n] {
            self.total.add_assign(&slot.grads);
            loss += slot.loss;
        }
        Ok(loss)
    }
}

/// `w <- decay * w - (eta / n) * g` for weights, `b <- b - (eta / n) * g` for
/// biases, where `g` is the gradient summed over a batch of `n` samples.
pub fn apply_update(net: &mut Cnn, grad_sum: &Params, n: usize, h: &Hyperparams) -> Result<()> {
    for l in grad_sum.layers() {
        let bad = l
            .weights
            .iter()
            .chain(l.biases)
            .enumerate()
            .find(|(_, v)| !v.is_finite());
        if let Some((index, &value)) = bad {
            return Err(Error::NonFiniteGradient {
                layer: l.name,
                index,
                value,
            });
        }
    }
    let decay = h.decay();
    let step = h.eta / n as f64;
    for (p, g) in net.params.layers_mut().into_iter().zip(grad_sum.layers()) {
        for (w, &d) in p.weights.iter_mut().zip(g.weights) {
            *w = decay * *w - step * d;
        }
        for (b, &d) in p.biases.iter_mut().zip(g.biases) {
            *b -= step * d;
        }
    }
    Ok(())
}

/// One update from explicit inputs. Returns the mean loss of the batch.
pub fn sgd_step(net: &mut Cnn, batch: &[(PatchInput, Class)], h: &Hyperparams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    let mut ws = BatchWorkspace::new(&net.geometry(), batch.len());
    let loss = ws.accumulate(net, batch.len(), |i, out, _| {
        let (input, label) = &batch[i];
        if input.samples().len() != out.len() {
            return Err(Error::Shape(format!(
                "patch has {} samples, network expects {}",
                input.samples().len(),
                out.len()
            )));
        }
        out.copy_from_slice(input.samples());
        Ok(*label)
    })?;
    apply_update(net, &ws.total, batch.len(), h)?;
    Ok(loss / batch.len() as f64)
}

/// Shuffle, then one update per consecutive batch of `kappa` (the last
/// batch may be shorter). Returns the mean training loss.
pub fn run_epoch<I, R>(
    net: &mut Cnn,
    inputs: &I,
    samples: &[TrainSample],
    h: &Hyperparams,
    rng: &mut R,
    ws: &mut BatchWorkspace,
) -> Result<f64>
where
    I: SampleInputs + ?Sized,
    R: Rng + ?Sized,
{
    if samples.is_empty() {
        return Err(Error::InvalidInput("no training samples".into()));
    }
    h.validate()?;
    let mut order: Vec<usize> = (0..samples.len()).collect();
    order.shuffle(rng);
    let mut loss = 0.0;
    for batch in order.chunks(h.kappa) {
        loss += ws.accumulate(net, batch.len(), |i, out, scratch| {
            let s = &samples[batch[i]];
            inputs.write(s, out, scratch)?;
            Ok(s.label)
        })?;
        apply_update(net, &ws.total, batch.len(), h)?;
    }
    Ok(loss / samples.len() as f64)
}

/// Every fourth point of each class pool, starting with the first.
pub fn eval_points(pools: &Pools) -> Vec<TrainSample> {
    pools.iter().flat_map(|p| p.iter().step_by(4).copied()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct EvalResult {
    /// (evaluated, correct) per class.
    pub per_class: [(usize, usize); NUM_CLASSES],
}

impl EvalResult {
    pub fn evaluated(&self) -> usize {
        self.per_class.iter().map(|c| c.0).sum()
    }

    pub fn correct(&self) -> usize {
        self.per_class.iter().map(|c| c.1).sum()
    }

    /// Fraction correct; 0 when nothing was evaluated.
    pub fn accuracy(&self) -> f64 {
        match self.evaluated() {
            0 => 0.0,
            n => self.correct() as f64 / n as f64,
        }
    }
}

const EVAL_CHUNK: usize = 256;

/// Classify the strided subset of `pools`.
pub fn epoch_eval<I: SampleInputs + ?Sized>(net: &Cnn, inputs: &I, pools: &Pools) -> Result<EvalResult> {
    let points = eval_points(pools);
    let g = net.geometry();
    let partial = points
        .par_chunks(EVAL_CHUNK)
        .map_init(
            || (Trace::new(&g), vec![0.0; g.input_len()], PatchScratch::default()),
            |(trace, input, scratch), chunk| -> Result<EvalResult> {
                let mut r = EvalResult::default();
                for s in chunk {
                    inputs.write(s, input, scratch)?;
                    let pred = argmax(net.forward_with(input, trace)?);
                    let c = &mut r.per_class[s.label.index()];
                    c.0 += 1;
                    c.1 += usize::from(pred == s.label.index());
                }
                Ok(r)
            },
        )
        .collect::<Result<Vec<_>>>()?;
    let mut total = EvalResult::default();
    for r in partial {
        for (t, p) in total.per_class.iter_mut().zip(r.per_class) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    Ok(total)
}
