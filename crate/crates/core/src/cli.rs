//! The `cmudrn` command line.
//!
//! Exit codes: 0 success, 2 usage error, 3 missing or unreadable file,
//! 4 malformed input (config, image, manifest, checkpoint), 5 checkpoint
//! version mismatch, 6 failure while running (e.g. non-finite loss).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use thiserror::Error;

use crate::bench::{self, BenchConfig, BenchError, Clock, FakeClock, MonotonicClock};
use crate::config::ConfigError;
use crate::data::{self, read_image, write_image, DataError, Dataset, GenConfig, PpmError};
use crate::losses::LossReport;
use crate::train::{self, evaluate, restore, Checkpoint, CheckpointError, TrainConfig, TrainError, Trainer};

#[derive(Debug, Parser)]
#[command(name = "cmudrn", version, about = "Unified deraining and desnowing with cross-stitched dual recursive networks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic clean/rain/snow dataset.
    GenData {
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Number of clean scenes; each gets a rain and a snow rendering.
        #[arg(long, default_value_t = 200)]
        count: usize,
        /// Image side in pixels (at least 32).
        #[arg(long, default_value_t = 64)]
        size: usize,
    },
    /// Train on the training split of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// `key = value` training config; flags below override it.
        #[arg(long, conflicts_with = "resume")]
        config: Option<PathBuf>,
        /// Checkpoint to write.
        #[arg(long)]
        out: PathBuf,
        /// Continue from this checkpoint with its stored config.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Training log CSV [default: OUT with extension .csv].
        #[arg(long)]
        log: Option<PathBuf>,
        /// Optimizer steps to run; 0 writes the initialized model untouched.
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        lr: Option<f64>,
        /// Loop count T.
        #[arg(long)]
        loops: Option<usize>,
    },
    /// Print per-label PSNR/SSIM of a checkpoint on a dataset.
    Eval {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        /// Which part of the dataset to score, using the checkpoint's train fraction.
        #[arg(long, value_enum, default_value_t = Split::All)]
        split: Split,
    },
    /// Restore one PPM image (no weather label needed).
    Infer {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time forward passes over a size x loop-count grid.
    Bench {
        /// Bench config (size_start, size_stop, size_step, loops, samples, warmup, seed, channels).
        #[arg(long)]
        config: Option<PathBuf>,
        /// Heatmap CSV to write.
        #[arg(long)]
        out: PathBuf,
        /// Also write an SVG heatmap.
        #[arg(long)]
        svg: Option<PathBuf>,
        /// Replace the wall clock with one advancing this many seconds per read.
        #[arg(long)]
        fake_clock: Option<f64>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Split {
    Train,
    Test,
    All,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Missing {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("{0}")]
    Version(CheckpointError),
    #[error("{0}")]
    Run(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Missing { .. } => 3,
            CliError::Parse(_) => 4,
            CliError::Version(_) => 5,
            CliError::Run(_) => 6,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Run(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Parse(e.to_string())
    }
}

impl From<PpmError> for CliError {
    fn from(e: PpmError) -> Self {
        match e {
            PpmError::Io { path, source } => CliError::Missing { path, source },
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Ppm(p) => p.into(),
            DataError::Io { path, source } => CliError::Missing { path, source },
            DataError::Manifest { .. } | DataError::MissingPartner { .. } => CliError::Parse(e.to_string()),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match e {
            CheckpointError::Io { path, source } => CliError::Missing { path, source },
            CheckpointError::Version { .. } => CliError::Version(e),
            other => CliError::Parse(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            TrainError::Checkpoint(c) => c.into(),
            TrainError::Config(c) => c.into(),
            other => CliError::Run(other.to_string()),
        }
    }
}

impl From<BenchError> for CliError {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Io { path, source } => CliError::Missing { path, source },
            other => CliError::Parse(other.to_string()),
        }
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Missing {
        path: path.display().to_string(),
        source,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|source| CliError::Run(format!("{}: {source}", path.display())))
}

/// Runs one parsed command, writing user-facing output to `out`.
pub fn run(cli: Cli, out: &mut dyn std::io::Write) -> Result<(), CliError> {
    match cli.command {
        Command::GenData {
            out: dir,
            seed,
            count,
            size,
        } => {
            let ds = data::generate(&GenConfig { seed, count, size })?;
            ds.save(&dir)?;
            writeln!(out, "wrote {} pairs to {}", ds.len(), dir.display())?;
        }
        Command::Train {
            data,
            config,
            out: ckpt_path,
            resume,
            log,
            steps,
            epochs,
            seed,
            lr,
            loops,
        } => {
            let ds = Dataset::load(&data)?;
            let mut trainer = match &resume {
                Some(p) => Checkpoint::load(p)?.into_trainer()?,
                None => {
                    let cfg = match &config {
                        Some(p) => TrainConfig::from_text(&read_text(p)?)?,
                        None => TrainConfig::default(),
                    };
                    Trainer::new(override_config(cfg, seed, lr, loops, epochs)?)?
                }
            };
            if resume.is_some() {
                trainer.config = override_config(trainer.config.clone(), seed, lr, loops, epochs)?;
                trainer.config.apply_to(&mut trainer.params);
            }
            if let Some(n) = steps {
                trainer.config.max_steps = trainer.step() + n;
            }
            let (train_split, _) = ds.split(trainer.config.train_fraction)?;
            let mut csv = format!("{}\n", train::LOG_HEADER);
            if steps != Some(0) {
                let mut on_step = |s: u64, r: &LossReport| {
                    csv.push_str(&train::log_row(s, r));
                    csv.push('\n');
                    log::info!("step {s} combined {}", r.combined);
                };
                trainer.fit(&train_split, &mut on_step)?;
            }
            Checkpoint::from_trainer(&trainer).save(&ckpt_path)?;
            let log_path = log.unwrap_or_else(|| ckpt_path.with_extension("csv"));
            write_file(&log_path, csv)?;
            writeln!(
                out,
                "trained {} steps, checkpoint {}, log {}",
                trainer.step(),
                ckpt_path.display(),
                log_path.display()
            )?;
        }
        Command::Eval { data, ckpt, split } => {
            let trainer = Checkpoint::load(&ckpt)?.into_trainer()?;
            let ds = Dataset::load(&data)?;
            let ds = match split {
                Split::All => ds,
                Split::Train => ds.split(trainer.config.train_fraction)?.0,
                Split::Test => ds.split(trainer.config.train_fraction)?.1,
            };
            let metrics = evaluate(&trainer.params, &ds, &trainer.config.ssim_config())?;
            writeln!(out, "label  psnr_db  ssim")?;
            for m in metrics {
                writeln!(out, "{}  {:.4}  {:.4}", m.label, m.psnr, m.ssim)?;
            }
        }
        Command::Infer {
            ckpt,
            input,
            out: out_path,
        } => {
            let trainer = Checkpoint::load(&ckpt)?.into_trainer()?;
            let img = read_image(&input)?;
            let restored = restore(&trainer.params, &img)?;
            write_image(&out_path, &restored).map_err(|e| CliError::Run(e.to_string()))?;
            writeln!(out, "wrote {}", out_path.display())?;
        }
        Command::Bench {
            config,
            out: csv_path,
            svg,
            fake_clock,
        } => {
            let cfg = match &config {
                Some(p) => BenchConfig::from_text(&read_text(p)?)?,
                None => BenchConfig::default(),
            };
            let mut clock: Box<dyn Clock> = match fake_clock {
                Some(tick) => Box::new(FakeClock::new(tick)),
                None => Box::new(MonotonicClock::new()),
            };
            let cells = bench::run_grid(&|t| cfg.model(t), &cfg.grid, cfg.seed, clock.as_mut())?;
            bench::emit_heatmap_csv(&cells, &csv_path)?;
            if let Some(p) = svg {
                write_file(&p, bench::heatmap_svg(&cells))?;
            }
            let failed = cells.iter().filter(|c| c.error.is_some()).count();
            writeln!(out, "wrote {} cells ({failed} failed) to {}", cells.len(), csv_path.display())?;
        }
    }
    Ok(())
}

fn override_config(
    mut cfg: TrainConfig,
    seed: Option<u64>,
    lr: Option<f64>,
    loops: Option<usize>,
    epochs: Option<usize>,
) -> Result<TrainConfig, ConfigError> {
    if let Some(v) = seed {
        cfg.seed = v;
    }
    if let Some(v) = lr {
        cfg.lr = v;
    }
    if let Some(v) = loops {
        cfg.loops = v;
    }
    if let Some(v) = epochs {
        cfg.epochs = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Usage errors and `--help` are printed by clap.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli, &mut std::io::stdout()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
