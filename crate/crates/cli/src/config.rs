//! Flat `key = value` run configuration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use fundus_seg::cnn::{Geometry, DEFAULT_SLOPE};
use fundus_seg::imagenorm::DEFAULT_WINDOW;
use fundus_seg::patch::PatchGeometry;
use fundus_seg::pipeline::{ContextSource, PrepareOptions};
use fundus_seg::trainer::{Hyperparams, SamplePlan};

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    /// `<id>.ppm`, `<id>_mask.pgm`, `<id>_truth.pgm` in one directory.
    Flat,
    /// `training/` and `test/` trees with `images/`, `mask/`, `1st_manual/`.
    Drive,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub eta: f64,
    pub lambda: f64,
    pub kappa: usize,
    /// `None` means the number of selected samples.
    pub phi: Option<usize>,
    pub epochs: usize,
    pub seed: u64,
    pub targets: [usize; 4],
    pub window_small: usize,
    pub window_mid: usize,
    pub window_large: usize,
    pub slope: f64,
    pub norm_window: usize,
    pub context: ContextSource,
    pub layout: Layout,
    pub train_data: Option<PathBuf>,
    pub eval_data: Option<PathBuf>,
    pub run_dir: PathBuf,
    /// 0 uses every core.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let h = Hyperparams::default();
        let p = PatchGeometry::default();
        RunConfig {
            eta: h.eta,
            lambda: h.lambda,
            kappa: h.kappa,
            phi: None,
            epochs: h.epochs,
            seed: h.seed,
            targets: SamplePlan::full_scale().targets(),
            window_small: p.small,
            window_mid: p.mid,
            window_large: p.large,
            slope: DEFAULT_SLOPE,
            norm_window: DEFAULT_WINDOW,
            context: ContextSource::Normalized,
            layout: Layout::Flat,
            train_data: None,
            eval_data: None,
            run_dir: PathBuf::from("run"),
            workers: 0,
        }
    }
}

pub const KEYS: [&str; 18] = [
    "eta",
    "lambda",
    "kappa",
    "phi",
    "epochs",
    "seed",
    "targets",
    "window_small",
    "window_mid",
    "window_large",
    "slope",
    "norm_window",
    "context",
    "layout",
    "train_data",
    "eval_data",
    "run_dir",
    "workers",
];

fn num<T: FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse()
        .map_err(|_| CliError::Usage(format!("{key}: cannot parse {v:?}")))
}

fn path_opt(v: &str) -> Option<PathBuf> {
    if v.is_empty() || v == "none" {
        None
    } else {
        Some(PathBuf::from(v))
    }
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key.trim() {
            "eta" => self.eta = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "kappa" => self.kappa = num(key, v)?,
            "phi" => self.phi = if v == "auto" { None } else { Some(num(key, v)?) },
            "epochs" => self.epochs = num(key, v)?,
            "seed" => self.seed = num(key, v)?,
            "targets" => {
                let parts: Vec<&str> = v.split(',').map(str::trim).collect();
                if parts.len() != 4 {
                    return Err(CliError::Usage(format!("targets: expected 4 comma-separated counts, got {v:?}")));
                }
                for (t, p) in self.targets.iter_mut().zip(parts) {
                    *t = num(key, p)?;
                }
            }
            "window_small" => self.window_small = num(key, v)?,
            "window_mid" => self.window_mid = num(key, v)?,
            "window_large" => self.window_large = num(key, v)?,
            "slope" => self.slope = num(key, v)?,
            "norm_window" => self.norm_window = num(key, v)?,
            "context" => {
                self.context = match v {
                    "normalized" => ContextSource::Normalized,
                    "original" => ContextSource::Original,
                    _ => return Err(CliError::Usage(format!("context: expected normalized or original, got {v:?}"))),
                }
            }
            "layout" => {
                self.layout = match v {
                    "flat" => Layout::Flat,
                    "drive" => Layout::Drive,
                    _ => return Err(CliError::Usage(format!("layout: expected flat or drive, got {v:?}"))),
                }
            }
            "train_data" => self.train_data = path_opt(v),
            "eval_data" => self.eval_data = path_opt(v),
            "run_dir" => self.run_dir = PathBuf::from(v),
            "workers" => self.workers = num(key, v)?,
            other => return Err(CliError::Usage(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Apply a `key=value` override.
    pub fn apply(&mut self, assignment: &str) -> Result<(), CliError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("expected key=value, got {assignment:?}")))?;
        self.set(k, v)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            cfg.apply(line)
                .map_err(|e| CliError::Usage(format!("line {}: {}", n + 1, e.message())))?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Every key in a fixed order; parsing this text gives the same config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let path = |p: &Option<PathBuf>| p.as_ref().map_or("none".to_string(), |p| p.display().to_string());
        let t = self.targets;
        let _ = writeln!(s, "eta = {}", self.eta);
        let _ = writeln!(s, "lambda = {}", self.lambda);
        let _ = writeln!(s, "kappa = {}", self.kappa);
        let _ = writeln!(s, "phi = {}", self.phi.map_or("auto".to_string(), |p| p.to_string()));
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "targets = {},{},{},{}", t[0], t[1], t[2], t[3]);
        let _ = writeln!(s, "window_small = {}", self.window_small);
        let _ = writeln!(s, "window_mid = {}", self.window_mid);
        let _ = writeln!(s, "window_large = {}", self.window_large);
        let _ = writeln!(s, "slope = {}", self.slope);
        let _ = writeln!(s, "norm_window = {}", self.norm_window);
        let context = match self.context {
            ContextSource::Normalized => "normalized",
            ContextSource::Original => "original",
        };
        let _ = writeln!(s, "context = {context}");
        let layout = match self.layout {
            Layout::Flat => "flat",
            Layout::Drive => "drive",
        };
        let _ = writeln!(s, "layout = {layout}");
        let _ = writeln!(s, "train_data = {}", path(&self.train_data));
        let _ = writeln!(s, "eval_data = {}", path(&self.eval_data));
        let _ = writeln!(s, "run_dir = {}", self.run_dir.display());
        let _ = writeln!(s, "workers = {}", self.workers);
        s
    }

    pub fn patch_geometry(&self) -> PatchGeometry {
        PatchGeometry {
            small: self.window_small,
            mid: self.window_mid,
            large: self.window_large,
            size: self.window_mid,
        }
    }

    pub fn prepare_options(&self) -> PrepareOptions {
        PrepareOptions {
            window: self.norm_window,
            geometry: self.patch_geometry(),
            context: self.context,
        }
    }

    pub fn net_geometry(&self) -> Geometry {
        Geometry {
            input: self.window_mid,
            ..Geometry::CANONICAL
        }
    }

    /// Hyperparameters for a run over `selected` samples.
    pub fn hyperparams(&self, selected: usize) -> Hyperparams {
        Hyperparams {
            eta: self.eta,
            lambda: self.lambda,
            kappa: self.kappa,
            phi: self.phi.unwrap_or(selected),
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}
