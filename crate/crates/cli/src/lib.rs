//! Command implementations behind the `fundus-seg` binary.
//!
//! Every `cmd_*` returns `Ok` on success; [`CliError::exit_code`] maps
//! failures to the process exit status (1 internal, 2 usage or I/O).

pub mod config;
mod manifest;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use fundus_seg::cnn::{load_model, save_model, Cnn};
use fundus_seg::dataset::{
    load_drive, load_flat, read_labels, read_mask, read_ppm, synth_fundus, write_flat, write_labels, write_ppm,
    FundusRecord, Split,
};
use fundus_seg::imagenorm::normalize_fundus;
use fundus_seg::metrics::{confusion, per_image_report, ConfusionMatrix};
use fundus_seg::patch::PatchSource;
use fundus_seg::pipeline::{class_pools, merge_pools, overlay, prepare, segment_image};
use fundus_seg::trainer::{
    best_epoch, checkpoint_path, epoch_eval, read_log, stratified_sample, train_select, write_log, EpochRecord, Pools,
    SamplePlan, TrainState,
};
use fundus_seg::{Error, LabelMap, Mask};
use rayon::prelude::*;

pub use config::{Layout, RunConfig};
pub use manifest::{sha256_hex, write_manifest};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io(String),
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Internal(_) => 1,
            CliError::Usage(_) | CliError::Io(_) => 2,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Io(m) | CliError::Internal(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let kind = match self {
            CliError::Usage(_) => "usage",
            CliError::Io(_) => "i/o",
            CliError::Internal(_) => "internal",
        };
        write!(f, "{kind} error: {}", self.message())
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let msg = e.to_string();
        match e {
            Error::Io(_) | Error::Load { .. } | Error::CorruptModel(_) | Error::Consistency { .. } => CliError::Io(msg),
            Error::Usage(_) | Error::InvalidInput(_) | Error::Shape(_) | Error::Degenerate(_) => CliError::Usage(msg),
            Error::NonFiniteGradient { .. } => CliError::Internal(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;

fn io_at(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(format!("{}: {e}", path.display()))
}

/// Run `f` on a pool of `workers` threads (0 = one per core).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Internal(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

fn mask_or_full(mask: Option<&Path>, width: usize, height: usize) -> CliResult<Mask> {
    match mask {
        Some(p) => Ok(read_mask(p)?),
        None => Ok(Mask::full(width, height)),
    }
}

/// Normalize the lighting of one colour image.
pub fn cmd_normalize(input: &Path, mask: Option<&Path>, out: &Path, window: usize) -> CliResult<()> {
    let image = read_ppm(input)?;
    let mask = mask_or_full(mask, image.width(), image.height())?;
    let normalized = normalize_fundus(&image, &mask, window)?;
    write_ppm(out, &normalized)?;
    Ok(())
}

fn load_split(cfg: &RunConfig, root: &Path, split: Split) -> CliResult<Vec<FundusRecord>> {
    Ok(match cfg.layout {
        Layout::Flat => load_flat(root)?,
        Layout::Drive => load_drive(root, split)?,
    })
}

struct Prepared {
    sources: Vec<PatchSource>,
    pools: Pools,
}

fn prepare_set(cfg: &RunConfig, records: &[FundusRecord]) -> CliResult<Prepared> {
    let opts = cfg.prepare_options();
    let parts = records
        .par_iter()
        .enumerate()
        .map(|(i, r)| -> CliResult<(PatchSource, Pools)> {
            let truth = r
                .truth
                .as_ref()
                .ok_or_else(|| CliError::Io(format!("record {} has no ground truth", r.id)))?;
            let pools = class_pools(truth, &r.mask, i)?;
            let source = prepare(&r.image, &r.mask, &opts)?.source;
            Ok((source, pools))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let (sources, pools): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
    Ok(Prepared {
        sources,
        pools: merge_pools(pools),
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub samples: usize,
    pub model: PathBuf,
    pub log: PathBuf,
}

pub const MODEL_FILE: &str = "model.fseg";
pub const LOG_FILE: &str = "log.csv";
pub const CONFIG_FILE: &str = "config.txt";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const CHECKPOINT_DIR: &str = "checkpoints";

fn state_for(cfg: &RunConfig, resume: bool, ckpt: &Path, log_path: &Path) -> CliResult<TrainState> {
    let fresh = || -> CliResult<TrainState> {
        Ok(TrainState::fresh(Cnn::init(cfg.net_geometry(), cfg.slope, cfg.seed)?))
    };
    if !resume || !log_path.exists() {
        return fresh();
    }
    let log = read_log(log_path)?;
    let Some(best) = best_epoch(&log) else {
        return fresh();
    };
    let last = load_model(checkpoint_path(ckpt, log.len()))?;
    let best = load_model(checkpoint_path(ckpt, best))?;
    if last.geometry() != cfg.net_geometry() {
        return Err(CliError::Usage("checkpoints in the run directory were made with another geometry".into()));
    }
    Ok(TrainState::resume(last, log, best)?)
}

/// Train and keep the epoch with the best evaluation accuracy. Writes the
/// model, log, checkpoints, resolved config and manifest under `run_dir`.
pub fn cmd_train(cfg: &RunConfig, resume: bool) -> CliResult<TrainSummary> {
    let train_root = cfg
        .train_data
        .clone()
        .ok_or_else(|| CliError::Usage("train_data is not set".into()))?;
    with_workers(cfg.workers, || train_inner(cfg, &train_root, resume))?
}

fn train_inner(cfg: &RunConfig, train_root: &Path, resume: bool) -> CliResult<TrainSummary> {
    let t0 = Instant::now();
    let train = load_split(cfg, train_root, Split::Train)?;
    let eval_root = cfg.eval_data.as_deref().unwrap_or(train_root);
    let train_set = prepare_set(cfg, &train)?;
    let eval_set = if cfg.eval_data.is_none() && cfg.layout == Layout::Flat {
        None
    } else {
        Some(prepare_set(cfg, &load_split(cfg, eval_root, Split::Test)?)?)
    };
    let eval_set = eval_set.as_ref().unwrap_or(&train_set);

    let plan = SamplePlan::new(cfg.targets)?;
    let samples = stratified_sample(&train_set.pools, &plan, cfg.seed)?;
    let h = cfg.hyperparams(samples.len());
    h.validate()?;
    println!(
        "{} training images, {} samples, {} evaluation points, prepared in {:.1}s",
        train.len(),
        samples.len(),
        eval_set.pools.iter().map(|p| p.len().div_ceil(4)).sum::<usize>(),
        t0.elapsed().as_secs_f64()
    );

    let run = &cfg.run_dir;
    let ckpt = run.join(CHECKPOINT_DIR);
    fs::create_dir_all(&ckpt).map_err(io_at(&ckpt))?;
    let log_path = run.join(LOG_FILE);
    let state = state_for(cfg, resume, &ckpt, &log_path)?;
    let mut log: Vec<EpochRecord> = state.log.clone();

    let outcome = train_select(
        state,
        &train_set.sources,
        &samples,
        &h,
        |net| Ok(epoch_eval(net, &eval_set.sources, &eval_set.pools)?.accuracy()),
        |rec, net| {
            save_model(net, checkpoint_path(&ckpt, rec.epoch))?;
            log.push(rec.clone());
            write_log(&log_path, &log)?;
            println!(
                "epoch {:>3}  loss {:.5}  accuracy {:.4}  {:.1}s",
                rec.epoch, rec.mean_loss, rec.eval_accuracy, rec.wall_seconds
            );
            Ok(())
        },
    )?;

    let model = run.join(MODEL_FILE);
    save_model(&outcome.best, &model)?;
    write_log(&log_path, &outcome.log)?;
    let config_text = cfg.to_text();
    fs::write(run.join(CONFIG_FILE), &config_text).map_err(io_at(run))?;
    let mut files = vec![PathBuf::from(CONFIG_FILE), PathBuf::from(MODEL_FILE), PathBuf::from(LOG_FILE)];
    files.extend((1..=outcome.log.len()).map(|e| checkpoint_path(CHECKPOINT_DIR, e)));
    write_manifest(run, &config_text, &files)?;

    let best_accuracy = outcome.log[outcome.best_epoch - 1].eval_accuracy;
    println!("selected epoch {} with accuracy {:.4}", outcome.best_epoch, best_accuracy);
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_accuracy,
        samples: samples.len(),
        model,
        log: log_path,
    })
}

/// Default overlay path next to the label file.
pub fn overlay_path(labels: &Path) -> PathBuf {
    let stem = labels.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let stem = stem.strip_suffix("_labels").unwrap_or(&stem);
    labels.with_file_name(format!("{stem}_overlay.ppm"))
}

/// Classify every effective point of one image. Writes the label PGM and a
/// tinted overlay PPM.
pub fn cmd_segment(
    cfg: &RunConfig,
    model: &Path,
    image: &Path,
    mask: Option<&Path>,
    out: &Path,
    overlay_out: Option<&Path>,
) -> CliResult<LabelMap> {
    let net = load_model(model)?;
    let img = read_ppm(image)?;
    let mask = mask_or_full(mask, img.width(), img.height())?;
    let opts = cfg.prepare_options();
    let labels = with_workers(cfg.workers, || segment_image(&net, &img, &mask, &opts))??;
    write_labels(out, &labels)?;
    let ov = overlay_out.map_or_else(|| overlay_path(out), Path::to_path_buf);
    write_ppm(&ov, &overlay(&img, &labels)?)?;
    Ok(labels)
}

/// `.pgm` files of `dir` keyed by id. Files carrying `suffix` win; without
/// any, every `.pgm` counts.
fn pgm_by_id(dir: &Path, suffix: &str) -> CliResult<BTreeMap<String, PathBuf>> {
    let entries = fs::read_dir(dir).map_err(io_at(dir))?;
    let mut all = BTreeMap::new();
    let mut tagged = BTreeMap::new();
    for e in entries {
        let p = e?.path();
        if !p.is_file() || p.extension().is_none_or(|x| x != "pgm") {
            continue;
        }
        let stem = p.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(id) = stem.strip_suffix(suffix) {
            tagged.insert(id.to_string(), p.clone());
        }
        all.insert(stem, p);
    }
    Ok(if tagged.is_empty() { all } else { tagged })
}

pub const REPORT_FILES: [&str; 5] = ["images.csv", "confusion.csv", "percentages.csv", "classes.csv", "report.txt"];

/// Compare predicted label maps with the truth inside each mask.
pub fn cmd_eval(pred: &Path, truth: &Path, masks: &Path, out: Option<&Path>) -> CliResult<String> {
    let preds = pgm_by_id(pred, "_labels")?;
    let truths = pgm_by_id(truth, "_truth")?;
    let mask_files = pgm_by_id(masks, "_mask")?;
    if truths.is_empty() {
        return Err(CliError::Io(format!("{}: no truth files", truth.display())));
    }
    if let Some(id) = preds.keys().find(|id| !truths.contains_key(*id)) {
        return Err(CliError::Io(format!("prediction for image {id} has no truth file")));
    }
    let items = truths
        .par_iter()
        .map(|(id, tp)| -> CliResult<(String, ConfusionMatrix)> {
            let pp = preds
                .get(id)
                .ok_or_else(|| CliError::Io(format!("missing prediction for image {id}")))?;
            let mp = mask_files
                .get(id)
                .ok_or_else(|| CliError::Io(format!("missing mask for image {id}")))?;
            let cm = confusion(&read_labels(pp)?, &read_labels(tp)?, &read_mask(mp)?)
                .map_err(|e| CliError::Io(format!("image {id}: {e}")))?;
            Ok((id.clone(), cm))
        })
        .collect::<CliResult<Vec<_>>>()?;
    let report = per_image_report(&items);
    let text = report.to_text();
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(io_at(dir))?;
        let bodies = [
            report.images_csv(),
            report.confusion_csv(),
            report.percentages_csv(),
            report.classes_csv(),
            text.clone(),
        ];
        for (name, body) in REPORT_FILES.iter().zip(bodies) {
            let p = dir.join(name);
            fs::write(&p, body).map_err(io_at(&p))?;
        }
    }
    Ok(text)
}

/// Write `count` synthetic records (image, mask, truth) with seeds
/// `seed..seed + count`.
pub fn cmd_synth(seed: u64, count: usize, size: usize, out: &Path) -> CliResult<Vec<PathBuf>> {
    fs::create_dir_all(out).map_err(io_at(out))?;
    let written = (0..count as u64)
        .into_par_iter()
        .map(|i| -> CliResult<Vec<PathBuf>> {
            let rec = synth_fundus(seed + i, size)?;
            Ok(write_flat(out, &rec)?)
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(written.into_iter().flatten().collect())
}
