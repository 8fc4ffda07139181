// Fit one rain/snow tuple and watch PSNR climb.
//
// `cargo run --release --example train_overfit -- [TUPLE_ITERATIONS]`

use cmudrn::data::{self, GenConfig};
use cmudrn::train::{evaluate, TrainConfig, Trainer};

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let iterations = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(15);
    let ds = data::generate(&GenConfig {
        seed: 0,
        count: 1,
        size: 32,
    })?;
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: iterations,
        channels: 8,
        lr: 1e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg.clone())?;
    let before = evaluate(&trainer.params, &ds, &cfg.ssim_config())?;
    let mut losses = Vec::new();
    trainer.fit(&ds, &mut |step, r| {
        if step % 10 == 0 {
            println!("step {step:>4}  combined {:.4}", r.combined);
        }
        losses.push(r.combined);
    })?;
    let after = evaluate(&trainer.params, &ds, &cfg.ssim_config())?;
    for (b, a) in before.iter().zip(&after) {
        println!(
            "{}: PSNR {:.2} -> {:.2} dB, SSIM {:.3} -> {:.3}",
            a.label, b.psnr, a.psnr, b.ssim, a.ssim
        );
    }
    if after.iter().zip(&before).any(|(a, b)| a.psnr <= b.psnr) {
        return Err("training did not improve PSNR".into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
