//! Image quality metrics and the training loss terms.
//!
//! Every loss is a sum of two optional summands: a structural term
//! `1 - SSIM` and a Frobenius term. Local and recurrence losses use the
//! squared Frobenius norm; the global loss uses the plain norm. Frobenius
//! terms are averaged over the batch.

mod ssim;

use thiserror::Error;

use crate::tensor::{self, Tensor, TensorError};

pub use ssim::{ssim, SsimConfig};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LossError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("recurrence loss needs at least one intermediate")]
    NoIntermediates,
    #[error("invalid loss configuration: {0}")]
    Config(String),
}

/// Which summands of each loss are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LossTerms {
    pub ssim: bool,
    pub frobenius: bool,
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms {
            ssim: true,
            frobenius: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossConfig {
    pub ssim: SsimConfig,
    pub terms: LossTerms,
}

/// `1 - SSIM(x, y)`.
pub fn ssim_loss(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor, LossError> {
    let s = ssim(x, y, cfg)?;
    Ok(tensor::sub(&Tensor::scalar(1.0), &s)?)
}

fn batch(t: &Tensor) -> f64 {
    t.shape()[0] as f64
}

/// Structural dissimilarity plus squared Frobenius distance per image.
pub fn local_loss(pred: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor, LossError> {
    let mut total = Tensor::scalar(0.0);
    if cfg.terms.ssim {
        total = tensor::add(&total, &ssim_loss(pred, gt, &cfg.ssim)?)?;
    }
    if cfg.terms.frobenius {
        let diff = tensor::sub(pred, gt)?;
        let fro = tensor::scale(&tensor::frobenius_sq(&diff), 1.0 / batch(pred));
        total = tensor::add(&total, &fro)?;
    }
    Ok(total)
}

/// Sum of [`local_loss`] over every outer-iteration estimate.
pub fn recur_loss(intermediates: &[Tensor], gt: &Tensor, cfg: &LossConfig) -> Result<Tensor, LossError> {
    let (first, rest) = intermediates
        .split_first()
        .ok_or(LossError::NoIntermediates)?;
    let mut total = local_loss(first, gt, cfg)?;
    for x in rest {
        total = tensor::add(&total, &local_loss(x, gt, cfg)?)?;
    }
    Ok(total)
}

/// Structural dissimilarity plus the unsquared Frobenius distance per image.
pub fn global_loss(fused: &Tensor, gt: &Tensor, cfg: &LossConfig) -> Result<Tensor, LossError> {
    let mut total = Tensor::scalar(0.0);
    if cfg.terms.ssim {
        total = tensor::add(&total, &ssim_loss(fused, gt, &cfg.ssim)?)?;
    }
    if cfg.terms.frobenius {
        let diff = tensor::sub(fused, gt)?;
        let mut norms = Tensor::scalar(0.0);
        for i in 0..fused.shape()[0] {
            let item = tensor::select_batch(&diff, i)?;
            let norm = tensor::sqrt(&tensor::frobenius_sq(&item))?;
            norms = tensor::add(&norms, &norm)?;
        }
        total = tensor::add(&total, &tensor::scale(&norms, 1.0 / batch(fused)))?;
    }
    Ok(total)
}

/// Peak signal-to-noise ratio in dB; `f64::INFINITY` for identical inputs.
pub fn psnr(pred: &[f64], gt: &[f64], max_val: f64) -> f64 {
    assert_eq!(pred.len(), gt.len(), "psnr inputs differ in length");
    let mse = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / pred.len() as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_val * max_val / mse).log10()
    }
}

/// Per-component loss values of one step (or the mean over several).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossReport {
    pub local_rain: f64,
    pub local_snow: f64,
    pub recur_rain: f64,
    pub recur_snow: f64,
    pub global: f64,
    pub combined: f64,
}

impl LossReport {
    pub fn component_sum(&self) -> f64 {
        self.local_rain + self.local_snow + self.recur_rain + self.recur_snow + self.global
    }

    pub fn recur(&self) -> f64 {
        self.recur_rain + self.recur_snow
    }

    pub fn is_finite(&self) -> bool {
        [
            self.local_rain,
            self.local_snow,
            self.recur_rain,
            self.recur_snow,
            self.global,
            self.combined,
        ]
        .iter()
        .all(|v| v.is_finite())
    }

    /// Component-wise mean. Empty input gives all zeros.
    pub fn mean(reports: &[LossReport]) -> LossReport {
        if reports.is_empty() {
            return LossReport::default();
        }
        let k = reports.len() as f64;
        let mut m = LossReport::default();
        for r in reports {
            m.local_rain += r.local_rain;
            m.local_snow += r.local_snow;
            m.recur_rain += r.recur_rain;
            m.recur_snow += r.recur_snow;
            m.global += r.global;
            m.combined += r.combined;
        }
        m.local_rain /= k;
        m.local_snow /= k;
        m.recur_rain /= k;
        m.recur_snow /= k;
        m.global /= k;
        m.combined /= k;
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(shape: [usize; 4], f: impl Fn(usize) -> f64) -> Tensor {
        Tensor::new(shape, (0..shape.iter().product()).map(f).collect()).unwrap()
    }

    #[test]
    fn psnr_analytic_values() {
        let gt = vec![0.5; 100];
        assert_eq!(psnr(&gt, &gt, 1.0), f64::INFINITY);
        let pred: Vec<f64> = gt.iter().map(|v| v + 0.1).collect();
        assert!((psnr(&pred, &gt, 1.0) - 20.0).abs() < 1e-9);
        let pred: Vec<f64> = gt.iter().map(|v| v + 0.01).collect();
        assert!((psnr(&pred, &gt, 1.0) - 40.0).abs() < 1e-9);
    }

    #[test]
    fn identical_inputs_have_zero_loss() {
        let cfg = LossConfig::default();
        let x = img([2, 3, 12, 12], |i| (i % 17) as f64 / 17.0);
        assert_eq!(ssim(&x, &x, &cfg.ssim).unwrap().item(), 1.0);
        assert_eq!(ssim_loss(&x, &x, &cfg.ssim).unwrap().item(), 0.0);
        assert_eq!(local_loss(&x, &x, &cfg).unwrap().item(), 0.0);
        assert_eq!(global_loss(&x, &x, &cfg).unwrap().item(), 0.0);
        assert_eq!(recur_loss(&[x.clone(), x.clone()], &x, &cfg).unwrap().item(), 0.0);
    }

    #[test]
    fn single_pixel_perturbation_frobenius() {
        let cfg = LossConfig {
            terms: LossTerms {
                ssim: false,
                frobenius: true,
            },
            ..Default::default()
        };
        let gt = img([2, 3, 8, 8], |i| (i % 5) as f64 / 5.0);
        let eps = 0.25;
        let mut d = gt.data().to_vec();
        d[77] += eps;
        let pred = Tensor::new(gt.shape(), d).unwrap();
        let l = local_loss(&pred, &gt, &cfg).unwrap().item();
        assert!((l - eps * eps / 2.0).abs() < 1e-15);
    }

    #[test]
    fn global_frobenius_is_unsquared() {
        let cfg = LossConfig {
            terms: LossTerms {
                ssim: false,
                frobenius: true,
            },
            ..Default::default()
        };
        let gt = Tensor::zeros([1, 1, 1, 2]).unwrap();
        let pred = Tensor::new([1, 1, 1, 2], vec![3.0, 4.0]).unwrap();
        assert_eq!(global_loss(&pred, &gt, &cfg).unwrap().item(), 5.0);
        assert_eq!(local_loss(&pred, &gt, &cfg).unwrap().item(), 25.0);
    }

    #[test]
    fn disabled_terms_give_zero() {
        let cfg = LossConfig {
            terms: LossTerms {
                ssim: false,
                frobenius: false,
            },
            ..Default::default()
        };
        let a = img([1, 3, 8, 8], |i| (i % 3) as f64);
        let b = img([1, 3, 8, 8], |i| (i % 7) as f64);
        assert_eq!(local_loss(&a, &b, &cfg).unwrap().item(), 0.0);
        assert_eq!(global_loss(&a, &b, &cfg).unwrap().item(), 0.0);
    }

    #[test]
    fn recur_loss_rejects_empty() {
        let gt = Tensor::zeros([1, 3, 4, 4]).unwrap();
        assert_eq!(
            recur_loss(&[], &gt, &LossConfig::default()).unwrap_err(),
            LossError::NoIntermediates
        );
    }

    #[test]
    fn shape_mismatch_is_reported() {
        let a = Tensor::zeros([1, 3, 8, 8]).unwrap();
        let b = Tensor::zeros([1, 3, 8, 9]).unwrap();
        assert!(matches!(
            local_loss(&a, &b, &LossConfig::default()),
            Err(LossError::Tensor(TensorError::Shape { dim: "width", .. }))
        ));
    }

    #[test]
    fn report_mean_and_sum() {
        let r = LossReport {
            local_rain: 1.0,
            local_snow: 0.0,
            recur_rain: 2.0,
            recur_snow: 0.0,
            global: 0.5,
            combined: 3.5,
        };
        assert_eq!(r.component_sum(), 3.5);
        let m = LossReport::mean(&[r, LossReport::default()]);
        assert_eq!(m.combined, 1.75);
        assert_eq!(m.recur(), 1.0);
    }
}
