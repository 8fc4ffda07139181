//! Central finite-difference gradient checking.
//!
//! The numeric side only ever runs forward passes under [`no_grad`], so it
//! shares no code with the reverse-mode path it is checking.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::tensor::{no_grad, Result, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    /// Finite-difference half step.
    pub step: f64,
    /// Lower bound on the relative-error denominator. Gradients smaller than
    /// this are compared on an absolute scale.
    pub floor: f64,
    /// Check at most this many coordinates per input (sampled with `seed`).
    pub max_coords: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            floor: 1e-6,
            max_coords: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Mismatch {
    pub input: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst: Option<Mismatch>,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of `f` at `inputs` with central
/// differences. `f` must map the inputs to a scalar.
pub fn check_gradients<F>(inputs: &[Tensor], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    let leaves = inputs
        .iter()
        .map(|t| Tensor::param(t.shape(), t.data().to_vec()))
        .collect::<Result<Vec<_>>>()?;
    f(&leaves)?.backward()?;
    let analytic: Vec<Vec<f64>> = leaves
        .iter()
        .map(|t| t.grad().unwrap_or_else(|| vec![0.0; t.len()]))
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst: None,
    };
    for (i, input) in inputs.iter().enumerate() {
        let indices: Vec<usize> = match opts.max_coords {
            Some(m) if m < input.len() => {
                let mut v = sample(&mut rng, input.len(), m).into_vec();
                v.sort_unstable();
                v
            }
            _ => (0..input.len()).collect(),
        };
        for idx in indices {
            let eval = |delta: f64| -> Result<f64> {
                let perturbed = inputs
                    .iter()
                    .enumerate()
                    .map(|(j, t)| {
                        let mut d = t.data().to_vec();
                        if j == i {
                            d[idx] += delta;
                        }
                        Tensor::new(t.shape(), d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                no_grad(|| f(&perturbed)).map(|t| t.item())
            };
            let numeric = (eval(opts.step)? - eval(-opts.step)?) / (2.0 * opts.step);
            let a = analytic[i][idx];
            let err = relative_error(a, numeric, opts.floor);
            report.checked += 1;
            if err > report.max_rel_error || report.worst.is_none() {
                report.max_rel_error = err.max(report.max_rel_error);
                report.worst = Some(Mismatch {
                    input: i,
                    index: idx,
                    analytic: a,
                    numeric,
                });
            }
        }
    }
    Ok(report)
}
