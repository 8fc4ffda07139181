//! Differentiable windowed SSIM.
//!
//! Local statistics come from a separable Gaussian filter over every valid
//! window position. The backward pass pushes per-position partials of SSIM
//! with respect to the five local moments back through the transposed filter.

use crate::tensor::{check_dim, Function, Tensor, TensorError};

use super::LossError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimConfig {
    /// Gaussian window side, odd.
    pub window: usize,
    pub sigma: f64,
    pub c1: f64,
    pub c2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimConfig {
    fn default() -> Self {
        Self::for_range(1.0)
    }
}

impl SsimConfig {
    /// 11x11 window, sigma 1.5, `c1 = (0.01 R)^2`, `c2 = (0.03 R)^2`.
    pub fn for_range(dynamic_range: f64) -> Self {
        SsimConfig {
            window: 11,
            sigma: 1.5,
            c1: (0.01 * dynamic_range).powi(2),
            c2: (0.03 * dynamic_range).powi(2),
            dynamic_range,
        }
    }

    pub fn validate(&self) -> Result<(), LossError> {
        if self.window < 3 || self.window % 2 == 0 {
            return Err(LossError::Config(format!(
                "ssim window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0) {
            return Err(LossError::Config("ssim c1 and c2 must be positive".into()));
        }
        if !(self.sigma > 0.0 && self.dynamic_range > 0.0) {
            return Err(LossError::Config(
                "ssim sigma and dynamic range must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Window actually used on an `h x w` plane: the configured side, or the
    /// largest odd side that fits when the image is smaller.
    pub fn effective_window(&self, h: usize, w: usize) -> usize {
        let fit = h.min(w);
        if fit >= self.window {
            self.window
        } else if fit % 2 == 1 {
            fit
        } else {
            fit - 1
        }
    }
}

pub(crate) fn gaussian_kernel(size: usize, sigma: f64) -> Vec<f64> {
    let c = (size / 2) as f64;
    let raw: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - c;
            (-d * d / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Valid separable correlation of an `h x w` plane.
fn filter_valid(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let s = k.len();
    let (ho, wo) = (h - s + 1, w - s + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..h {
        let row = &src[y * w..(y + 1) * w];
        let out = &mut tmp[y * wo..(y + 1) * wo];
        for (x, o) in out.iter_mut().enumerate() {
            *o = row[x..x + s].iter().zip(k).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ho * wo];
    for y in 0..ho {
        let dst = &mut out[y * wo..(y + 1) * wo];
        for (u, &ku) in k.iter().enumerate() {
            let row = &tmp[(y + u) * wo..(y + u + 1) * wo];
            dst.iter_mut().zip(row).for_each(|(d, r)| *d += ku * r);
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters an `ho x wo` map back to `h x w`.
fn filter_valid_adjoint(src: &[f64], h: usize, w: usize, k: &[f64]) -> Vec<f64> {
    let s = k.len();
    let (ho, wo) = (h - s + 1, w - s + 1);
    let mut tmp = vec![0.0; h * wo];
    for y in 0..ho {
        let row = &src[y * wo..(y + 1) * wo];
        for (u, &ku) in k.iter().enumerate() {
            let dst = &mut tmp[(y + u) * wo..(y + u + 1) * wo];
            dst.iter_mut().zip(row).for_each(|(d, r)| *d += ku * r);
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        let row = &tmp[y * wo..(y + 1) * wo];
        let dst = &mut out[y * w..(y + 1) * w];
        for (x, &r) in row.iter().enumerate() {
            dst[x..x + s].iter_mut().zip(k).for_each(|(d, kv)| *d += kv * r);
        }
    }
    out
}

/// Per-position partials of the SSIM map with respect to the local moments.
struct Partials {
    d_mx: Vec<f64>,
    d_my: Vec<f64>,
    d_sq: Vec<f64>, // same for E[x^2] and E[y^2]
    d_xy: Vec<f64>,
}

struct SsimBackward {
    kernel: Vec<f64>,
    planes: Vec<Partials>,
    positions: usize,
}

impl Function for SsimBackward {
    fn name(&self) -> &'static str {
        "ssim"
    }

    fn backward(&self, inputs: &[Tensor], _output: &Tensor, grad_output: &[f64]) -> Vec<Option<Vec<f64>>> {
        let (x, y) = (&inputs[0], &inputs[1]);
        let [_, _, h, w] = x.shape();
        let plane = h * w;
        let scale = grad_output[0] / (self.planes.len() * self.positions) as f64;
        let mut gx = x.requires_grad().then(|| vec![0.0; x.len()]);
        let mut gy = y.requires_grad().then(|| vec![0.0; y.len()]);
        let k = &self.kernel;
        for (p, part) in self.planes.iter().enumerate() {
            let xs = &x.data()[p * plane..(p + 1) * plane];
            let ys = &y.data()[p * plane..(p + 1) * plane];
            let back = |m: &[f64]| {
                let scaled: Vec<f64> = m.iter().map(|v| v * scale).collect();
                filter_valid_adjoint(&scaled, h, w, k)
            };
            let t_sq = back(&part.d_sq);
            let t_xy = back(&part.d_xy);
            if let Some(gx) = gx.as_mut() {
                let t_m = back(&part.d_mx);
                let dst = &mut gx[p * plane..(p + 1) * plane];
                for i in 0..plane {
                    dst[i] = t_m[i] + 2.0 * xs[i] * t_sq[i] + ys[i] * t_xy[i];
                }
            }
            if let Some(gy) = gy.as_mut() {
                let t_m = back(&part.d_my);
                let dst = &mut gy[p * plane..(p + 1) * plane];
                for i in 0..plane {
                    dst[i] = t_m[i] + 2.0 * ys[i] * t_sq[i] + xs[i] * t_xy[i];
                }
            }
        }
        vec![gx, gy]
    }
}

/// Mean SSIM over batch, channels and valid window positions.
pub fn ssim(x: &Tensor, y: &Tensor, cfg: &SsimConfig) -> Result<Tensor, LossError> {
    cfg.validate()?;
    let (sx, sy) = (x.shape(), y.shape());
    const DIMS: [&str; 4] = ["batch", "channels", "height", "width"];
    for i in 0..4 {
        check_dim("ssim", DIMS[i], sx[i], sy[i])?;
    }
    let [n, c, h, w] = sx;
    let side = cfg.effective_window(h, w);
    if side == 0 {
        return Err(TensorError::Invalid {
            op: "ssim",
            reason: "image too small".into(),
        }
        .into());
    }
    let kernel = gaussian_kernel(side, cfg.sigma);
    let plane = h * w;
    let positions = (h - side + 1) * (w - side + 1);
    let mut total = 0.0;
    let mut planes = Vec::with_capacity(n * c);
    for p in 0..n * c {
        let xs = &x.data()[p * plane..(p + 1) * plane];
        let ys = &y.data()[p * plane..(p + 1) * plane];
        let xx: Vec<f64> = xs.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = ys.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = xs.iter().zip(ys).map(|(a, b)| a * b).collect();
        let mx = filter_valid(xs, h, w, &kernel);
        let my = filter_valid(ys, h, w, &kernel);
        let exx = filter_valid(&xx, h, w, &kernel);
        let eyy = filter_valid(&yy, h, w, &kernel);
        let exy = filter_valid(&xy, h, w, &kernel);
        let mut part = Partials {
            d_mx: vec![0.0; positions],
            d_my: vec![0.0; positions],
            d_sq: vec![0.0; positions],
            d_xy: vec![0.0; positions],
        };
        for i in 0..positions {
            let (m1, m2) = (mx[i], my[i]);
            let a1 = 2.0 * m1 * m2 + cfg.c1;
            let a2 = 2.0 * (exy[i] - m1 * m2) + cfg.c2;
            let b1 = m1 * m1 + m2 * m2 + cfg.c1;
            let b2 = (exx[i] - m1 * m1) + (eyy[i] - m2 * m2) + cfg.c2;
            let d = b1 * b2;
            let s = a1 * a2 / d;
            total += s;
            part.d_mx[i] = (2.0 * m2 * (a2 - a1) - 2.0 * m1 * s * (b2 - b1)) / d;
            part.d_my[i] = (2.0 * m1 * (a2 - a1) - 2.0 * m2 * s * (b2 - b1)) / d;
            part.d_sq[i] = -s * b1 / d;
            part.d_xy[i] = 2.0 * a1 / d;
        }
        planes.push(part);
    }
    let value = total / (n * c * positions) as f64;
    Ok(Tensor::from_function(
        [1, 1, 1, 1],
        vec![value],
        vec![x.clone(), y.clone()],
        Box::new(SsimBackward {
            kernel,
            planes,
            positions,
        }),
    )?)
}
