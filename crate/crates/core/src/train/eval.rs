use crate::data::{Dataset, Image, Label};
use crate::losses::{psnr, ssim, SsimConfig};
use crate::nets::{cmudrn_forward, CmudrnParams};
use crate::tensor::no_grad;

use super::{Result, TrainError};

/// Mean metrics of the clamped fused output over one weather label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabelMetrics {
    pub label: Label,
    pub count: usize,
    /// dB; `f64::INFINITY` when every restored image is exact.
    pub psnr: f64,
    pub ssim: f64,
}

/// Per-label mean PSNR and SSIM of the fused output against the clean
/// image. Labels absent from `ds` are omitted.
pub fn evaluate(params: &CmudrnParams, ds: &Dataset, ssim_cfg: &SsimConfig) -> Result<Vec<LabelMetrics>> {
    if ds.is_empty() {
        return Err(TrainError::EmptyEval);
    }
    let mut out = Vec::new();
    for label in Label::ALL {
        let (mut n, mut psnr_sum, mut ssim_sum) = (0usize, 0.0, 0.0);
        for pair in ds.pairs.iter().filter(|p| p.label == label) {
            let restored = restore(params, &pair.degraded)?;
            psnr_sum += psnr(&restored.data, &pair.clean.data, 1.0);
            ssim_sum += ssim(&restored.to_tensor(), &pair.clean.to_tensor(), ssim_cfg)?.item();
            n += 1;
        }
        if n > 0 {
            out.push(LabelMetrics {
                label,
                count: n,
                psnr: psnr_sum / n as f64,
                ssim: ssim_sum / n as f64,
            });
        }
    }
    Ok(out)
}

/// Blind restoration of one image: fused output clamped to `[0, 1]`.
pub fn restore(params: &CmudrnParams, degraded: &Image) -> Result<Image> {
    no_grad(|| {
        let out = cmudrn_forward(params, &degraded.to_tensor())?;
        Ok(Image::from_tensor(&out.fused, 0)?.clamped())
    })
}
