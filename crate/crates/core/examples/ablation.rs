// Train the ablation configurations side by side for a few steps and
// print the loss components each one reports.
//
// `cargo run --release --example ablation`

use cmudrn::data::{self, GenConfig};
use cmudrn::losses::LossReport;
use cmudrn::train::{TrainConfig, Trainer};

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let ds = data::generate(&GenConfig {
        seed: 2,
        count: 4,
        size: 32,
    })?;
    let base = TrainConfig {
        batch_size: 1,
        channels: 4,
        loops: 2,
        lr: 1e-3,
        max_steps: 4,
        ..TrainConfig::default()
    };
    //            cs     ssim   frob   global local
    let rows = [
        (false, true, true, true, true),
        (true, true, true, true, true),
        (true, false, true, true, true),
        (true, true, false, true, true),
        (true, true, true, false, true),
        (true, true, true, true, false),
    ];
    println!("cs    ssim  frob  glob  local |    local   recur  global  combined");
    for (cs, ssim, frob, global, local) in rows {
        let cfg = TrainConfig {
            use_cross_stitch: cs,
            use_ssim_term: ssim,
            use_frobenius_term: frob,
            use_global_loss: global,
            use_local_losses: local,
            use_recur_loss: local,
            ..base.clone()
        };
        let mut t = Trainer::new(cfg)?;
        let mut steps = Vec::new();
        t.fit(&ds, &mut |_, r| steps.push(*r))?;
        let m = LossReport::mean(&steps);
        let flag = |b: bool| if b { "x" } else { "-" };
        println!(
            "{:<5} {:<5} {:<5} {:<5} {:<5} | {:>8.3} {:>7.3} {:>7.3} {:>9.3}",
            flag(cs),
            flag(ssim),
            flag(frob),
            flag(global),
            flag(local),
            m.local_rain + m.local_snow,
            m.recur(),
            m.global,
            m.combined
        );
        if !m.is_finite() {
            return Err("non-finite loss".into());
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
