use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use fundus_seg::imagenorm::DEFAULT_WINDOW;
use fundus_seg_cli::{cmd_eval, cmd_normalize, cmd_segment, cmd_synth, cmd_train, CliResult, RunConfig};

#[derive(Parser)]
#[command(name = "fundus-seg", version, about = "Segment fundus images into background, optic disc, fovea and vessels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set epochs=10 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Worker threads (0 = one per core)
    #[arg(long)]
    workers: Option<usize>,
}

impl ConfigArgs {
    fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        for o in &self.overrides {
            cfg.apply(o)?;
        }
        if let Some(w) = self.workers {
            cfg.workers = w;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Even out illumination of a colour image
    Normalize {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Field-of-view mask (default: whole image)
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_WINDOW)]
        window: usize,
    },
    /// Train a network and keep the best epoch
    Train {
        #[command(flatten)]
        config: ConfigArgs,
        /// Continue from the checkpoints already in the run directory
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        run_dir: Option<PathBuf>,
    },
    /// Label every effective point of an image
    Segment {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Field-of-view mask (default: whole image)
        #[arg(long)]
        mask: Option<PathBuf>,
        /// Label PGM to write
        #[arg(long)]
        out: PathBuf,
        /// Overlay PPM (default: next to the labels)
        #[arg(long)]
        overlay: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score predicted label maps against the truth
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        mask: PathBuf,
        /// Directory for the CSV and text reports
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate synthetic fundus records
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Normalize {
            input,
            out,
            mask,
            window,
        } => cmd_normalize(&input, mask.as_deref(), &out, window),
        Command::Train {
            config,
            resume,
            run_dir,
        } => {
            let mut cfg = config.resolve()?;
            if let Some(d) = run_dir {
                cfg.run_dir = d;
            }
            let s = cmd_train(&cfg, resume)?;
            println!("model written to {}", s.model.display());
            Ok(())
        }
        Command::Segment {
            model,
            image,
            mask,
            out,
            overlay,
            config,
        } => {
            let cfg = config.resolve()?;
            let t = Instant::now();
            let labels = cmd_segment(&cfg, &model, &image, mask.as_deref(), &out, overlay.as_deref())?;
            let h = labels.histogram();
            println!(
                "segmented in {:.2}s: background {}, optic disc {}, fovea {}, vessels {}",
                t.elapsed().as_secs_f64(),
                h[0],
                h[1],
                h[2],
                h[3]
            );
            Ok(())
        }
        Command::Eval { pred, truth, mask, out } => {
            print!("{}", cmd_eval(&pred, &truth, &mask, out.as_deref())?);
            Ok(())
        }
        Command::Synth { seed, count, size, out } => {
            let files = cmd_synth(seed, count, size, &out)?;
            println!("wrote {} files to {}", files.len(), out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("fundus-seg: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
