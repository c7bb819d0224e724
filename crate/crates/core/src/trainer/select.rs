use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use super::{epoch_rng, run_epoch, BatchWorkspace, Hyperparams, SampleInputs, TrainSample};
use crate::cnn::Cnn;
use crate::error::{invalid, Error, Result};

pub const LOG_HEADER: &str = "epoch,mean_loss,eval_accuracy,wall_seconds";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    pub eval_accuracy: f64,
    pub wall_seconds: f64,
}

impl EpochRecord {
    fn csv_row(&self) -> String {
        format!("{},{},{},{:.3}", self.epoch, self.mean_loss, self.eval_accuracy, self.wall_seconds)
    }

    fn parse(line: &str) -> Option<EpochRecord> {
        let mut f = line.split(',');
        let r = EpochRecord {
            epoch: f.next()?.parse().ok()?,
            mean_loss: f.next()?.parse().ok()?,
            eval_accuracy: f.next()?.parse().ok()?,
            wall_seconds: f.next()?.parse().ok()?,
        };
        f.next().is_none().then_some(r)
    }
}

pub fn write_log(path: impl AsRef<Path>, records: &[EpochRecord]) -> Result<()> {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    for r in records {
        let _ = writeln!(s, "{}", r.csv_row());
    }
    fs::write(path, s)?;
    Ok(())
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<EpochRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next() != Some(LOG_HEADER) {
        return Err(Error::Load {
            path: path.to_path_buf(),
            reason: "missing training log header".into(),
        });
    }
    lines
        .enumerate()
        .map(|(i, l)| {
            EpochRecord::parse(l).ok_or_else(|| Error::Load {
                path: path.to_path_buf(),
                reason: format!("malformed log line {}", i + 2),
            })
        })
        .collect()
}

pub fn checkpoint_path(dir: impl AsRef<Path>, epoch: usize) -> PathBuf {
    dir.as_ref().join(format!("epoch_{epoch:03}.fseg"))
}

/// Where a run stands between epochs.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub net: Cnn,
    pub log: Vec<EpochRecord>,
    /// Best checkpoint so far and its epoch.
    pub best: Option<(usize, Cnn)>,
}

impl TrainState {
    pub fn fresh(net: Cnn) -> Self {
        TrainState {
            net,
            log: Vec::new(),
            best: None,
        }
    }

    /// Continue after `log.len()` completed epochs. `best` must be the
    /// checkpoint of the best logged epoch (earliest among ties).
    pub fn resume(net: Cnn, log: Vec<EpochRecord>, best: Cnn) -> Result<Self> {
        for (i, r) in log.iter().enumerate() {
            if r.epoch != i + 1 {
                return Err(invalid(format!("log entry {i} is epoch {}, expected {}", r.epoch, i + 1)));
            }
        }
        let epoch = best_epoch(&log).ok_or_else(|| invalid("cannot resume from an empty log"))?;
        Ok(TrainState {
            net,
            log,
            best: Some((epoch, best)),
        })
    }

    pub fn completed(&self) -> usize {
        self.log.len()
    }
}

/// Epoch with the highest evaluation accuracy; earliest wins ties.
pub fn best_epoch(log: &[EpochRecord]) -> Option<usize> {
    let mut best: Option<&EpochRecord> = None;
    for r in log {
        if best.is_none_or(|b| r.eval_accuracy > b.eval_accuracy) {
            best = Some(r);
        }
    }
    best.map(|r| r.epoch)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Cnn,
    pub best_epoch: usize,
    pub last: Cnn,
    pub log: Vec<EpochRecord>,
}

/// Train until `h.epochs` epochs are complete, evaluating after each one.
/// `on_epoch` sees every new record with the net it describes, e.g. to write
/// checkpoints.
pub fn train_select<I, E, C>(
    state: TrainState,
    inputs: &I,
    samples: &[TrainSample],
    h: &Hyperparams,
    mut eval: E,
    mut on_epoch: C,
) -> Result<TrainOutcome>
where
    I: SampleInputs + ?Sized,
    E: FnMut(&Cnn) -> Result<f64>,
    C: FnMut(&EpochRecord, &Cnn) -> Result<()>,
{
    h.validate()?;
    let TrainState { mut net, mut log, mut best } = state;
    let mut ws = BatchWorkspace::new(&net.geometry(), h.kappa);
    for epoch in log.len() + 1..=h.epochs {
        let start = Instant::now();
        let mut rng = epoch_rng(h.seed, epoch);
        let mean_loss = run_epoch(&mut net, inputs, samples, h, &mut rng, &mut ws)?;
        let eval_accuracy = eval(&net)?;
        let record = EpochRecord {
            epoch,
            mean_loss,
            eval_accuracy,
            wall_seconds: start.elapsed().as_secs_f64(),
        };
        let improved = match &best {
            None => true,
            Some((e, _)) => eval_accuracy > log[*e - 1].eval_accuracy,
        };
        if improved {
            best = Some((epoch, net.clone()));
        }
        on_epoch(&record, &net)?;
        log.push(record);
    }
    let (best_epoch, best) = best.ok_or_else(|| invalid("no epochs were run"))?;
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: net,
        log,
    })
}
