// Train briefly, save a checkpoint, load it back and restore an unseen
// rainy image without telling the model which weather it is.
//
// `cargo run --release --example restore_image`

use cmudrn::data::{self, write_image, GenConfig, Label};
use cmudrn::losses::psnr;
use cmudrn::train::{restore, Checkpoint, TrainConfig, Trainer};

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let dir = std::env::temp_dir().join("cmudrn-restore");
    std::fs::create_dir_all(&dir)?;
    let ds = data::generate(&GenConfig {
        seed: 5,
        count: 4,
        size: 32,
    })?;
    let (train, test) = ds.split(0.75)?;

    let cfg = TrainConfig {
        batch_size: 1,
        channels: 8,
        loops: 2,
        lr: 1e-3,
        max_steps: 24,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(cfg)?;
    trainer.fit(&train, &mut |_, _| {})?;
    let ckpt = dir.join("model.ckpt");
    Checkpoint::from_trainer(&trainer).save(&ckpt)?;

    let model = Checkpoint::load(&ckpt)?.into_trainer()?;
    let pair = test.pairs.iter().find(|p| p.label == Label::Rain).ok_or("no rain image")?;
    let restored = restore(&model.params, &pair.degraded)?;
    write_image(dir.join("degraded.ppm"), &pair.degraded)?;
    write_image(dir.join("restored.ppm"), &restored)?;
    println!("checkpoint after {} steps: {}", model.step(), ckpt.display());
    println!("degraded PSNR {:.2} dB", psnr(&pair.degraded.data, &pair.clean.data, 1.0));
    println!("restored PSNR {:.2} dB", psnr(&restored.data, &pair.clean.data, 1.0));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
