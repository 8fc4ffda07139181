// Render a small clean/rain/snow dataset and write it as PPM files.
//
// `cargo run --example synth_dataset -- [OUT_DIR]`

use cmudrn::data::{self, Dataset, GenConfig, Label};

type Error = Box<dyn std::error::Error>;

pub fn run_example() -> Result<(), Error> {
    let out = std::env::args()
        .nth(1)
        .filter(|a| !a.starts_with('-'))
        .map(Into::into)
        .unwrap_or_else(|| std::env::temp_dir().join("cmudrn-synth"));
    let cfg = GenConfig {
        seed: 0,
        count: 8,
        size: 48,
    };
    let ds = data::generate(&cfg)?;
    ds.save(&out)?;

    for label in Label::ALL {
        let gains: Vec<f64> = ds
            .pairs
            .iter()
            .filter(|p| p.label == label)
            .map(|p| {
                let n = p.clean.data.len() as f64;
                p.degraded.data.iter().zip(&p.clean.data).map(|(d, c)| d - c).sum::<f64>() / n
            })
            .collect();
        let mean = gains.iter().sum::<f64>() / gains.len() as f64;
        println!("{label}: {} images, mean brightness added {mean:.4}", gains.len());
    }

    let back = Dataset::load(&out)?;
    println!("reloaded {} pairs from {}", back.len(), out.display());
    let (train, test) = back.split(0.75)?;
    println!("split: {} train / {} test pairs", train.len(), test.len());
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
