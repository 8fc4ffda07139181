//! Forward-pass latency over a grid of image sizes and loop counts.
//!
//! Each cell builds its model and draws its random images first, then runs
//! `warmup` untimed passes and `samples_per_cell` timed ones. Only the
//! forward call sits between the two clock reads.

use std::fmt::Write as _;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::config::{parse_entries, parse_list, ConfigError};
use crate::nets::{self, cmudrn_forward, CmudrnParams};
use crate::tensor::{no_grad, Tensor};

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("heatmap CSV line {line}: {reason}")]
    Csv { line: usize, reason: String },
}

/// Square side lengths times loop counts.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchGrid {
    pub sizes: Vec<usize>,
    pub loop_counts: Vec<usize>,
    pub samples_per_cell: usize,
    pub warmup: usize,
}

impl BenchGrid {
    /// Sizes 100..=500 in steps of 50, T = 1..=7, 30 samples, 1 warmup.
    pub fn desk() -> BenchGrid {
        BenchGrid {
            sizes: arithmetic(100, 500, 50),
            loop_counts: (1..=7).collect(),
            samples_per_cell: 30,
            warmup: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: &str| Err(ConfigError::Invalid(m.to_string()));
        if self.sizes.is_empty() || self.loop_counts.is_empty() {
            return fail("grid needs at least one size and one loop count");
        }
        if self.sizes.windows(2).any(|w| w[1] <= w[0]) {
            return fail("sizes must be strictly increasing");
        }
        if self.sizes[0] == 0 || self.loop_counts.contains(&0) {
            return fail("sizes and loop counts must be positive");
        }
        if self.samples_per_cell == 0 {
            return fail("samples_per_cell must be at least 1");
        }
        Ok(())
    }

    pub fn cells(&self) -> usize {
        self.sizes.len() * self.loop_counts.len()
    }
}

/// `start, start + step, ...` up to and including `stop`.
pub fn arithmetic(start: usize, stop: usize, step: usize) -> Vec<usize> {
    (start..=stop).step_by(step.max(1)).collect()
}

/// Grid plus model settings, as read from a bench config file.
///
/// Keys: `size_start`, `size_stop`, `size_step`, `loops` (comma list),
/// `samples`, `warmup`, `seed`, `channels`.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub grid: BenchGrid,
    pub seed: u64,
    pub channels: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            grid: BenchGrid::desk(),
            seed: 0,
            channels: nets::DEFAULT_CHANNELS,
        }
    }
}

impl BenchConfig {
    pub fn from_text(text: &str) -> Result<BenchConfig, ConfigError> {
        let mut c = BenchConfig::default();
        let (mut start, mut stop, mut step) = (100, 500, 50);
        for e in parse_entries(text)? {
            match e.key.as_str() {
                "size_start" => start = e.parse()?,
                "size_stop" => stop = e.parse()?,
                "size_step" => step = e.parse()?,
                "loops" => c.grid.loop_counts = parse_list(&e)?,
                "samples" => c.grid.samples_per_cell = e.parse()?,
                "warmup" => c.grid.warmup = e.parse()?,
                "seed" => c.seed = e.parse()?,
                "channels" => c.channels = e.parse()?,
                _ => return Err(e.unknown()),
            }
        }
        if step == 0 {
            return Err(ConfigError::Invalid("size_step must be positive".into()));
        }
        c.grid.sizes = arithmetic(start, stop, step);
        c.grid.validate()?;
        if c.channels == 0 {
            return Err(ConfigError::Invalid("channels must be positive".into()));
        }
        Ok(c)
    }

    /// Model with `loops` outer iterations, always built from `seed`.
    pub fn model(&self, loops: usize) -> CmudrnParams {
        nets::init_params(self.seed, self.channels, loops)
    }
}

/// Seconds from an arbitrary origin.
pub trait Clock {
    fn now(&mut self) -> f64;
}

pub struct MonotonicClock(Instant);

impl MonotonicClock {
    pub fn new() -> Self {
        MonotonicClock(Instant::now())
    }
}

impl Default for MonotonicClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for MonotonicClock {
    fn now(&mut self) -> f64 {
        self.0.elapsed().as_secs_f64()
    }
}

/// Advances by a fixed `tick` on every read, so every timed pass lasts
/// exactly `tick` seconds.
#[derive(Debug, Clone, Default)]
pub struct FakeClock {
    pub tick: f64,
    pub reads: u64,
}

impl FakeClock {
    pub fn new(tick: f64) -> Self {
        FakeClock { tick, reads: 0 }
    }
}

impl Clock for FakeClock {
    fn now(&mut self) -> f64 {
        self.reads += 1;
        self.reads as f64 * self.tick
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchCell {
    pub size: usize,
    pub loops: usize,
    pub mean_seconds: f64,
    pub stddev_seconds: f64,
    pub fps: f64,
    /// Set when the cell could not be measured; timings are then NaN.
    pub error: Option<String>,
}

impl BenchCell {
    fn failed(size: usize, loops: usize, reason: String) -> BenchCell {
        BenchCell {
            size,
            loops,
            mean_seconds: f64::NAN,
            stddev_seconds: f64::NAN,
            fps: f64::NAN,
            error: Some(reason),
        }
    }

    fn from_samples(size: usize, loops: usize, samples: &[f64]) -> BenchCell {
        let (mean, stddev) = mean_stddev(samples);
        BenchCell {
            size,
            loops,
            mean_seconds: mean,
            stddev_seconds: stddev,
            fps: 1.0 / mean,
            error: None,
        }
    }
}

/// Mean and sample standard deviation (0 for a single sample).
pub fn mean_stddev(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `normal(0.5, 0.25)` pixels clamped to `[0, 1]`.
pub fn random_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let normal = Normal::<f64>::new(0.5, 0.25).expect("valid normal parameters");
    let data = (0..3 * size * size)
        .map(|_| normal.sample(rng).clamp(0.0, 1.0))
        .collect();
    Tensor::new([1, 3, size, size], data).expect("size checked by the grid")
}

/// Times every `(size, T)` cell in size-major order. `model_factory(T)`
/// builds the network for loop count `T`. A cell whose forward pass fails
/// or panics is reported with an error marker and the grid continues.
pub fn run_grid(
    model_factory: &dyn Fn(usize) -> CmudrnParams,
    grid: &BenchGrid,
    seed: u64,
    clock: &mut dyn Clock,
) -> Result<Vec<BenchCell>, ConfigError> {
    grid.validate()?;
    let mut cells = Vec::with_capacity(grid.cells());
    for (si, &size) in grid.sizes.iter().enumerate() {
        for (ti, &loops) in grid.loop_counts.iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream((si * grid.loop_counts.len() + ti) as u64);
            let cell = catch_unwind(AssertUnwindSafe(|| {
                let model = model_factory(loops);
                let images: Vec<Tensor> = (0..grid.warmup + grid.samples_per_cell)
                    .map(|_| random_image(size, &mut rng))
                    .collect();
                time_cell(&model, &images, grid.warmup, clock)
            }));
            cells.push(match cell {
                Ok(Ok(samples)) => BenchCell::from_samples(size, loops, &samples),
                Ok(Err(reason)) => BenchCell::failed(size, loops, reason),
                Err(panic) => {
                    let reason = panic
                        .downcast_ref::<String>()
                        .cloned()
                        .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                        .unwrap_or_else(|| "panic".into());
                    BenchCell::failed(size, loops, reason)
                }
            });
            log::info!("bench size {size} T {loops} done");
        }
    }
    Ok(cells)
}

fn time_cell(
    model: &CmudrnParams,
    images: &[Tensor],
    warmup: usize,
    clock: &mut dyn Clock,
) -> Result<Vec<f64>, String> {
    no_grad(|| {
        for img in &images[..warmup] {
            cmudrn_forward(model, img).map_err(|e| e.to_string())?;
        }
        let mut samples = Vec::with_capacity(images.len() - warmup);
        for img in &images[warmup..] {
            let start = clock.now();
            let out = cmudrn_forward(model, img).map_err(|e| e.to_string())?;
            let end = clock.now();
            drop(out);
            samples.push(end - start);
        }
        Ok(samples)
    })
}

pub const HEATMAP_HEADER: &str = "size,T,mean_s,stddev_s,fps";

/// One row per cell after the header. Failed cells carry NaN timings.
pub fn heatmap_csv(cells: &[BenchCell]) -> String {
    let mut out = format!("{HEATMAP_HEADER}\n");
    for c in cells {
        writeln!(
            out,
            "{},{},{},{},{}",
            c.size, c.loops, c.mean_seconds, c.stddev_seconds, c.fps
        )
        .expect("writing to a String");
    }
    out
}

pub fn emit_heatmap_csv(cells: &[BenchCell], path: impl AsRef<Path>) -> Result<(), BenchError> {
    let path = path.as_ref();
    fs::write(path, heatmap_csv(cells)).map_err(|source| BenchError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn parse_heatmap_csv(text: &str) -> Result<Vec<BenchCell>, BenchError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == HEATMAP_HEADER => {}
        _ => {
            return Err(BenchError::Csv {
                line: 1,
                reason: format!("expected header `{HEATMAP_HEADER}`"),
            })
        }
    }
    let mut cells = Vec::new();
    for (i, line) in lines {
        let bad = |reason: &str| BenchError::Csv {
            line: i + 1,
            reason: reason.to_string(),
        };
        let f: Vec<&str> = line.split(',').collect();
        let [size, loops, mean, sd, fps] = f[..] else {
            return Err(bad("expected 5 fields"));
        };
        let int = |s: &str| s.parse::<usize>().map_err(|_| bad("bad integer"));
        let real = |s: &str| s.parse::<f64>().map_err(|_| bad("bad number"));
        let mean_seconds = real(mean)?;
        cells.push(BenchCell {
            size: int(size)?,
            loops: int(loops)?,
            mean_seconds,
            stddev_seconds: real(sd)?,
            fps: real(fps)?,
            error: mean_seconds.is_nan().then(|| "failed".to_string()),
        });
    }
    Ok(cells)
}

/// A neighbouring pair whose later cell is faster by more than the noise
/// allowance.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub axis: &'static str,
    pub from: (usize, usize),
    pub to: (usize, usize),
    pub drop_seconds: f64,
    pub allowance_seconds: f64,
}

fn find(cells: &[BenchCell], size: usize, loops: usize) -> Option<&BenchCell> {
    cells
        .iter()
        .find(|c| c.size == size && c.loops == loops && c.error.is_none())
}

/// Adjacent cells along T (fixed size) and along size (fixed T) where the
/// mean time drops by more than `noise_factor` pooled standard deviations.
pub fn monotonicity_violations(cells: &[BenchCell], noise_factor: f64) -> Vec<Violation> {
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.size).collect();
    let mut loops: Vec<usize> = cells.iter().map(|c| c.loops).collect();
    sizes.sort_unstable();
    sizes.dedup();
    loops.sort_unstable();
    loops.dedup();
    let mut out = Vec::new();
    let mut check = |axis, a: (usize, usize), b: (usize, usize)| {
        if let (Some(x), Some(y)) = (find(cells, a.0, a.1), find(cells, b.0, b.1)) {
            let pooled = ((x.stddev_seconds.powi(2) + y.stddev_seconds.powi(2)) / 2.0).sqrt();
            let drop = x.mean_seconds - y.mean_seconds;
            if drop > noise_factor * pooled {
                out.push(Violation {
                    axis,
                    from: a,
                    to: b,
                    drop_seconds: drop,
                    allowance_seconds: noise_factor * pooled,
                });
            }
        }
    };
    for &s in &sizes {
        for w in loops.windows(2) {
            check("T", (s, w[0]), (s, w[1]));
        }
    }
    for &t in &loops {
        for w in sizes.windows(2) {
            check("size", (w[0], t), (w[1], t));
        }
    }
    out
}

/// Least-squares slope of `ln(mean)` against `ln(size^2)` at loop count
/// `loops`; `None` with fewer than two measured cells.
pub fn loglog_slope(cells: &[BenchCell], loops: usize) -> Option<f64> {
    let pts: Vec<(f64, f64)> = cells
        .iter()
        .filter(|c| c.loops == loops && c.error.is_none() && c.mean_seconds > 0.0)
        .map(|c| (((c.size * c.size) as f64).ln(), c.mean_seconds.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Linear ramp from pale yellow `#ffffcc` (fastest cell) to dark red
/// `#bd0026` (slowest cell). `t` is clamped to `[0, 1]`.
pub fn ramp(t: f64) -> (u8, u8, u8) {
    let t = if t.is_nan() { 0.0 } else { t.clamp(0.0, 1.0) };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    (lerp(255.0, 189.0), lerp(255.0, 0.0), lerp(204.0, 38.0))
}

/// Heatmap with size on the x axis and T on the y axis (T = 1 at the
/// bottom). Failed cells are grey.
pub fn heatmap_svg(cells: &[BenchCell]) -> String {
    const CELL: usize = 48;
    const MARGIN: usize = 60;
    let mut sizes: Vec<usize> = cells.iter().map(|c| c.size).collect();
    let mut loops: Vec<usize> = cells.iter().map(|c| c.loops).collect();
    sizes.sort_unstable();
    sizes.dedup();
    loops.sort_unstable();
    loops.dedup();
    let ok = cells.iter().filter(|c| c.error.is_none()).map(|c| c.mean_seconds);
    let lo = ok.clone().fold(f64::INFINITY, f64::min);
    let hi = ok.fold(f64::NEG_INFINITY, f64::max);
    let (w, h) = (MARGIN + CELL * sizes.len() + 10, MARGIN + CELL * loops.len() + 10);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    for c in cells {
        let xi = sizes.iter().position(|&v| v == c.size).expect("size listed");
        let yi = loops.len() - 1 - loops.iter().position(|&v| v == c.loops).expect("T listed");
        let fill = match c.error {
            Some(_) => "#999999".to_string(),
            None => {
                let t = if hi > lo { (c.mean_seconds - lo) / (hi - lo) } else { 0.0 };
                let (r, g, b) = ramp(t);
                format!("#{r:02x}{g:02x}{b:02x}")
            }
        };
        let (x, y) = (MARGIN + xi * CELL, 10 + yi * CELL);
        writeln!(
            s,
            "<rect x=\"{x}\" y=\"{y}\" width=\"{CELL}\" height=\"{CELL}\" fill=\"{fill}\"><title>size {} T {}: {:.4} s</title></rect>",
            c.size, c.loops, c.mean_seconds
        )
        .expect("writing to a String");
    }
    let base = 10 + CELL * loops.len();
    for (i, size) in sizes.iter().enumerate() {
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{size}</text>",
            MARGIN + i * CELL + CELL / 2,
            base + 16
        )
        .expect("writing to a String");
    }
    for (i, t) in loops.iter().rev().enumerate() {
        writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">T={t}</text>",
            MARGIN - 6,
            10 + i * CELL + CELL / 2 + 4
        )
        .expect("writing to a String");
    }
    s.push_str("</svg>\n");
    s
}
