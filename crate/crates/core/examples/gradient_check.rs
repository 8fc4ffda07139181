// Finite-difference check of the full network and its loss.
//
// `cargo run --example gradient_check`

use cmudrn::gradcheck::{check_gradients, GradCheckOptions};
use cmudrn::losses::{global_loss, LossConfig};
use cmudrn::nets::{cmudrn_forward, init_params, Layers};
use cmudrn::tensor::{self, Tensor, TensorError};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Error = Box<dyn std::error::Error>;

fn invalid(e: impl std::fmt::Display) -> TensorError {
    TensorError::Invalid {
        op: "model",
        reason: e.to_string(),
    }
}

pub fn run_example() -> Result<(), Error> {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut random = |shape: tensor::Shape| -> Result<Tensor, Error> {
        let data = (0..tensor::numel(&shape)).map(|_| rng.gen::<f64>()).collect();
        Ok(Tensor::new(shape, data)?)
    };
    let y = random([1, 3, 8, 8])?;
    let gt = random([1, 3, 8, 8])?;

    // Nonzero biases keep pre-activations off the ReLU kink at exactly 0,
    // where the two one-sided derivatives disagree.
    let mut base = init_params(7, 2, 2);
    for (name, t) in base.parameters_mut() {
        if name.ends_with("bias") {
            *t = random(t.shape())?;
        }
    }
    let names: Vec<String> = base.parameters().into_iter().map(|(n, _)| n).collect();
    let leaves: Vec<Tensor> = base.parameters().into_iter().map(|(_, t)| t.clone()).collect();

    let cfg = LossConfig::default();
    let report = check_gradients(
        &leaves,
        |ps| {
            let mut model = base.clone();
            for ((_, slot), p) in model.parameters_mut().into_iter().zip(ps) {
                *slot = p.clone();
            }
            let out = cmudrn_forward(&model, &y).map_err(invalid)?;
            global_loss(&out.fused, &gt, &cfg).map_err(invalid)
        },
        &GradCheckOptions {
            max_coords: Some(4),
            ..GradCheckOptions::default()
        },
    )?;

    println!("parameters   {}", names.len());
    println!("coordinates  {}", report.checked);
    println!("max rel err  {:.3e}", report.max_rel_error);
    if report.max_rel_error >= 1e-4 {
        return Err(format!("gradient mismatch: {:?}", report.worst).into());
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<(), Error> {
    run_example()
}
