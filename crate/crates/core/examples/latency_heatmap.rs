// Time forward passes over a small size x loop-count grid and write the
// heatmap as CSV and SVG.
//
// `cargo run --release --example latency_heatmap -- [OUT_DIR]`

use cmudrn::bench::{
    emit_heatmap_csv, heatmap_svg, loglog_slope, monotonicity_violations, run_grid, BenchGrid,
    MonotonicClock,
};
use cmudrn::nets::init_params;

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let out = std::env::args()
        .nth(1)
        .filter(|a| !a.starts_with('-'))
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("cmudrn-bench"));
    std::fs::create_dir_all(&out)?;
    let grid = BenchGrid {
        sizes: vec![16, 32, 48, 64],
        loop_counts: vec![1, 2, 4],
        samples_per_cell: 3,
        warmup: 1,
    };
    let cells = run_grid(&|t| init_params(0, 8, t), &grid, 0, &mut MonotonicClock::new())?;
    for c in &cells {
        println!("size {:>3}  T {}  {:.5} s  ({:.1} fps)", c.size, c.loops, c.mean_seconds, c.fps);
    }
    for t in &grid.loop_counts {
        if let Some(s) = loglog_slope(&cells, *t) {
            println!("T {t}: time ~ pixels^{s:.2}");
        }
    }
    println!("monotonicity violations: {}", monotonicity_violations(&cells, 2.0).len());
    emit_heatmap_csv(&cells, out.join("heatmap.csv"))?;
    std::fs::write(out.join("heatmap.svg"), heatmap_svg(&cells))?;
    println!("wrote {}", out.join("heatmap.{csv,svg}").display());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
