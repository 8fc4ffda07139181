//! Stride-1 2-D cross-correlation lowered to a matrix product (im2col).

use super::{check_dim, Op, Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub padding: usize,
}

impl ConvSpec {
    /// Odd square kernel with padding `k / 2`, so height and width are kept.
    pub fn same(in_channels: usize, out_channels: usize, k: usize) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: (k, k),
            padding: k / 2,
        }
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels,
            self.kernel.0,
            self.kernel.1,
        ]
    }

    pub fn bias_shape(&self) -> [usize; 4] {
        [self.out_channels, 1, 1, 1]
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let ho = (h + 2 * self.padding).checked_sub(kh)? + 1;
        let wo = (w + 2 * self.padding).checked_sub(kw)? + 1;
        Some((ho, wo))
    }
}

/// Output pixels per im2col tile. Keeps the scratch matrix cache-sized
/// regardless of image size.
const TILE_PIXELS: usize = 1024;

struct Geometry {
    c: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geometry {
    fn k(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Valid output-column range for kernel column `kx`.
    fn x_range(&self, kx: usize) -> (usize, usize) {
        let lo = self.pad.saturating_sub(kx).min(self.wo);
        let hi = (self.w + self.pad).saturating_sub(kx).min(self.wo);
        (lo, hi.max(lo))
    }

    /// Output rows per tile.
    fn tile_rows(&self) -> usize {
        (TILE_PIXELS / self.wo.max(1)).clamp(1, self.ho.max(1))
    }

    /// `(first_row, pixel_offset, pixel_count)` of every tile.
    fn tiles(&self) -> impl Iterator<Item = (usize, usize, usize)> + '_ {
        let step = self.tile_rows();
        (0..self.ho).step_by(step).map(move |oy0| {
            let rows = step.min(self.ho - oy0);
            (oy0, oy0 * self.wo, rows * self.wo)
        })
    }
}

/// Unfolds output rows `oy0..oy0 + cols.len() / (k * wo)` into `cols`
/// (`k` rows, one column per output pixel of the tile).
fn im2col(x: &[f64], g: &Geometry, oy0: usize, cols: &mut [f64]) {
    let p = cols.len() / g.k();
    let rows = p / g.wo;
    for ci in 0..g.c {
        let plane = &x[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * p..(row + 1) * p];
                let (lo, hi) = g.x_range(kx);
                for r in 0..rows {
                    let line = &mut dst[r * g.wo..(r + 1) * g.wo];
                    let iy = oy0 + r + ky;
                    if iy < g.pad || iy - g.pad >= g.h {
                        line.fill(0.0);
                        continue;
                    }
                    let src = &plane[(iy - g.pad) * g.w..(iy - g.pad + 1) * g.w];
                    line[..lo].fill(0.0);
                    line[hi..].fill(0.0);
                    if lo < hi {
                        let ix0 = lo + kx - g.pad;
                        line[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`] for one tile: scatters `cols` back onto `dx`.
fn col2im_add(cols: &[f64], g: &Geometry, oy0: usize, dx: &mut [f64]) {
    let p = cols.len() / g.k();
    let rows = p / g.wo;
    for ci in 0..g.c {
        let plane = &mut dx[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (ci * g.kh + ky) * g.kw + kx;
                let src = &cols[row * p..(row + 1) * p];
                let (lo, hi) = g.x_range(kx);
                for r in 0..rows {
                    let iy = oy0 + r + ky;
                    if iy < g.pad || iy - g.pad >= g.h || lo == hi {
                        continue;
                    }
                    let line = &src[r * g.wo + lo..r * g.wo + hi];
                    let ix0 = lo + kx - g.pad;
                    let dst = &mut plane[(iy - g.pad) * g.w + ix0..(iy - g.pad) * g.w + ix0 + (hi - lo)];
                    dst.iter_mut().zip(line).for_each(|(d, s)| *d += s);
                }
            }
        }
    }
}

/// `C = A·B + beta * C` with explicit strides; `C` has row stride `rsc`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
    rsc: usize,
) {
    assert!(a.len() > (m - 1) * rsa + (k - 1) * csa);
    assert!(b.len() > (k - 1) * rsb + (n - 1) * csb);
    assert!(rsc >= n && c.len() >= (m - 1) * rsc + n);
    // SAFETY: the asserts above bound every index the kernel touches.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            rsc as isize,
            1,
        );
    }
}

fn geometry(input: &Tensor, spec: &ConvSpec) -> Result<Geometry> {
    let [_, c, h, w] = input.shape();
    let (ho, wo) = spec.output_hw(h, w).ok_or(TensorError::Invalid {
        op: "conv2d",
        reason: format!("kernel {:?} larger than padded input {h}x{w}", spec.kernel),
    })?;
    Ok(Geometry {
        c,
        h,
        w,
        kh: spec.kernel.0,
        kw: spec.kernel.1,
        pad: spec.padding,
        ho,
        wo,
    })
}

/// Stride-1 cross-correlation with zero padding.
///
/// `input` is `(n, in, h, w)`, `weights` `(out, in, kh, kw)` and `bias`
/// holds `out` values (shape `(out, 1, 1, 1)`).
pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    let [n, c, _, _] = input.shape();
    check_dim("conv2d", "input channels", spec.in_channels, c)?;
    let ws = weights.shape();
    let expected = spec.weight_shape();
    const DIMS: [&str; 4] = [
        "weight out channels",
        "weight in channels",
        "kernel height",
        "kernel width",
    ];
    for i in 0..4 {
        check_dim("conv2d", DIMS[i], expected[i], ws[i])?;
    }
    check_dim("conv2d", "bias length", spec.out_channels, bias.len())?;
    let g = geometry(input, spec)?;
    let (k, p, co) = (g.k(), g.p(), spec.out_channels);
    let item_in = c * g.h * g.w;

    let mut out = vec![0.0; n * co * p];
    let mut cols = vec![0.0; k * g.tile_rows() * g.wo];
    for b in 0..n {
        let x = &input.data()[b * item_in..(b + 1) * item_in];
        let dst = &mut out[b * co * p..(b + 1) * co * p];
        for (o, row) in dst.chunks_mut(p).enumerate() {
            row.fill(bias.data()[o]);
        }
        for (oy0, off, np) in g.tiles() {
            let tile = &mut cols[..k * np];
            im2col(x, &g, oy0, tile);
            gemm(co, k, np, weights.data(), (k, 1), tile, (np, 1), 1.0, &mut dst[off..], p);
        }
    }
    Ok(Tensor::from_op(
        [n, co, g.ho, g.wo],
        out,
        Op::Conv2d {
            input: input.clone(),
            weight: weights.clone(),
            bias: bias.clone(),
            spec: *spec,
        },
    ))
}

pub(super) fn conv2d_backward(
    input: &Tensor,
    weight: &Tensor,
    bias: &Tensor,
    spec: &ConvSpec,
    grad: &[f64],
) -> Vec<(Tensor, Vec<f64>)> {
    let g = geometry(input, spec).expect("validated in forward");
    let n = input.shape()[0];
    let (k, p, co) = (g.k(), g.p(), spec.out_channels);
    let item_in = g.c * g.h * g.w;
    let mut cols = vec![0.0; k * g.tile_rows() * g.wo];
    let mut result = Vec::with_capacity(3);

    if weight.requires_grad() {
        let mut dw = vec![0.0; co * k];
        for b in 0..n {
            let x = &input.data()[b * item_in..(b + 1) * item_in];
            let gout = &grad[b * co * p..(b + 1) * co * p];
            for (oy0, off, np) in g.tiles() {
                let tile = &mut cols[..k * np];
                im2col(x, &g, oy0, tile);
                gemm(co, np, k, &gout[off..], (p, 1), tile, (1, np), 1.0, &mut dw, k);
            }
        }
        result.push((weight.clone(), dw));
    }
    if bias.requires_grad() {
        let mut db = vec![0.0; co];
        for b in 0..n {
            for (o, row) in grad[b * co * p..(b + 1) * co * p].chunks(p).enumerate() {
                db[o] += row.iter().sum::<f64>();
            }
        }
        result.push((bias.clone(), db));
    }
    if input.requires_grad() {
        let mut dx = vec![0.0; n * item_in];
        for b in 0..n {
            let gout = &grad[b * co * p..(b + 1) * co * p];
            let dxb = &mut dx[b * item_in..(b + 1) * item_in];
            for (oy0, off, np) in g.tiles() {
                let tile = &mut cols[..k * np];
                gemm(k, co, np, weight.data(), (1, k), &gout[off..], (p, 1), 0.0, tile, np);
                col2im_add(tile, &g, oy0, dxb);
            }
        }
        result.push((input.clone(), dx));
    }
    result
}
