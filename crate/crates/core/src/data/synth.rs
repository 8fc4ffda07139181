//! Procedural clean scenes and additive rain/snow degradations.
//!
//! Everything is driven by ChaCha streams, so a seed reproduces the same
//! bytes on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{DataError, Image, Label};

/// Supersampling factor per axis for shape coverage.
const AA: usize = 4;

fn stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.gen(), rng.gen(), rng.gen()]
}

enum Shape {
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x < x1 && y >= y0 && y < y1,
            Shape::Ellipse { cx, cy, rx, ry } => {
                let (dx, dy) = ((x - cx) / rx, (y - cy) / ry);
                dx * dx + dy * dy <= 1.0
            }
        }
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Rect { x0, y0, x1, y1 } => (x0, y0, x1, y1),
            Shape::Ellipse { cx, cy, rx, ry } => (cx - rx, cy - ry, cx + rx, cy + ry),
        }
    }
}

fn render_scene(size: usize, rng: &mut ChaCha8Rng) -> Image {
    let mut img = Image::new(size, size);
    let s = size as f64;

    // Linear gradient between two colours along a random direction.
    let (c0, c1) = (random_color(rng), random_color(rng));
    let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    let (dx, dy) = (theta.cos(), theta.sin());
    let half = 0.5 * (dx.abs() + dy.abs()) * s;
    for y in 0..size {
        for x in 0..size {
            let proj = (x as f64 + 0.5 - s / 2.0) * dx + (y as f64 + 0.5 - s / 2.0) * dy;
            let t = (proj / half * 0.5 + 0.5).clamp(0.0, 1.0);
            for c in 0..3 {
                img.set(c, x, y, c0[c] + (c1[c] - c0[c]) * t);
            }
        }
    }

    let count = rng.gen_range(3..=8);
    for _ in 0..count {
        let shape = if rng.gen_bool(0.5) {
            let (w, h) = (rng.gen_range(0.1..0.5) * s, rng.gen_range(0.1..0.5) * s);
            let (x0, y0) = (rng.gen_range(-0.1..0.9) * s, rng.gen_range(-0.1..0.9) * s);
            Shape::Rect {
                x0,
                y0,
                x1: x0 + w,
                y1: y0 + h,
            }
        } else {
            Shape::Ellipse {
                cx: rng.gen_range(0.0..1.0) * s,
                cy: rng.gen_range(0.0..1.0) * s,
                rx: rng.gen_range(0.05..0.3) * s,
                ry: rng.gen_range(0.05..0.3) * s,
            }
        };
        let color = random_color(rng);
        let opacity = rng.gen_range(0.6..=1.0);
        let (bx0, by0, bx1, by1) = shape.bounds();
        let xr = (bx0.floor().max(0.0) as usize)..(bx1.ceil().clamp(0.0, s) as usize);
        let yr = (by0.floor().max(0.0) as usize)..(by1.ceil().clamp(0.0, s) as usize);
        for y in yr {
            for x in xr.clone() {
                let mut hits = 0;
                for sy in 0..AA {
                    for sx in 0..AA {
                        let px = x as f64 + (sx as f64 + 0.5) / AA as f64;
                        let py = y as f64 + (sy as f64 + 0.5) / AA as f64;
                        hits += shape.contains(px, py) as usize;
                    }
                }
                if hits == 0 {
                    continue;
                }
                let a = opacity * hits as f64 / (AA * AA) as f64;
                for (c, &col) in color.iter().enumerate() {
                    let v = img.get(c, x, y);
                    img.set(c, x, y, v + (col - v) * a);
                }
            }
        }
    }
    img.clamp01();
    img
}

/// `count` procedurally generated square scenes of side `size`.
pub fn gen_clean(seed: u64, count: usize, size: usize) -> Result<Vec<Image>, DataError> {
    if size < 32 {
        return Err(DataError::Config(format!("image size must be >= 32, got {size}")));
    }
    Ok((0..count)
        .map(|i| render_scene(size, &mut stream(seed, i as u64)))
        .collect())
}

/// Parameters of one additive weather degradation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegradeSpec {
    pub kind: Label,
    /// Streaks or flakes per 1000 pixels.
    pub density: f64,
    /// Streak length range in pixels.
    pub length: (f64, f64),
    /// Streak angle range in degrees from vertical.
    pub angle: (f64, f64),
    /// Flake radius range in pixels.
    pub radius: (f64, f64),
    /// Peak added brightness.
    pub intensity: f64,
    pub seed: u64,
}

impl DegradeSpec {
    pub fn rain(seed: u64) -> Self {
        DegradeSpec {
            kind: Label::Rain,
            density: 6.0,
            length: (6.0, 16.0),
            angle: (-20.0, 20.0),
            radius: (1.0, 3.0),
            intensity: 0.55,
            seed,
        }
    }

    pub fn snow(seed: u64) -> Self {
        DegradeSpec {
            kind: Label::Snow,
            density: 4.0,
            length: (6.0, 16.0),
            angle: (-20.0, 20.0),
            radius: (0.8, 2.8),
            intensity: 0.7,
            seed,
        }
    }

    pub fn for_label(kind: Label, seed: u64) -> Self {
        match kind {
            Label::Rain => Self::rain(seed),
            Label::Snow => Self::snow(seed),
        }
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if !(self.density > 0.0) {
            return Err(DataError::Config("density must be positive".into()));
        }
        if !(self.intensity > 0.0 && self.intensity <= 1.0) {
            return Err(DataError::Config("intensity must be in (0, 1]".into()));
        }
        let ordered = |(a, b): (f64, f64)| a.is_finite() && b.is_finite() && a <= b;
        if !(ordered(self.length) && ordered(self.angle) && ordered(self.radius)) {
            return Err(DataError::Config("parameter ranges must be ordered".into()));
        }
        if self.radius.0 <= 0.0 || self.length.0 < 0.0 {
            return Err(DataError::Config("radius and length must be positive".into()));
        }
        Ok(())
    }
}

fn uniform(rng: &mut ChaCha8Rng, (lo, hi): (f64, f64)) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}

fn splat(layer: &mut [f64], w: usize, h: usize, bounds: (f64, f64, f64, f64), mut f: impl FnMut(f64, f64) -> f64) {
    let (x0, y0, x1, y1) = bounds;
    let xs = (x0.floor().max(0.0) as usize)..(x1.ceil().clamp(0.0, w as f64) as usize);
    let ys = (y0.floor().max(0.0) as usize)..(y1.ceil().clamp(0.0, h as f64) as usize);
    for y in ys {
        for x in xs.clone() {
            let a = f(x as f64 + 0.5, y as f64 + 0.5);
            if a > 0.0 {
                layer[y * w + x] += a;
            }
        }
    }
}

/// Adds rain streaks or snow flakes to `clean` and clamps to `[0, 1]`.
///
/// Rain: thin anti-aliased segments with per-streak alpha. Snow: soft discs.
/// The same brightness is added to all three channels, so no pixel ever
/// gets darker.
pub fn degrade(clean: &Image, spec: &DegradeSpec) -> Result<Image, DataError> {
    spec.validate()?;
    let (w, h) = (clean.width, clean.height);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let count = (spec.density * (w * h) as f64 / 1000.0).floor() as usize;
    let mut layer = vec![0.0; w * h];
    for _ in 0..count {
        let cx = rng.gen_range(0.0..w as f64);
        let cy = rng.gen_range(0.0..h as f64);
        let alpha = spec.intensity * rng.gen_range(0.5..=1.0);
        match spec.kind {
            Label::Rain => {
                let len = uniform(&mut rng, spec.length);
                let ang = uniform(&mut rng, spec.angle).to_radians();
                let (ux, uy) = (ang.sin(), ang.cos());
                let (ax, ay) = (cx - 0.5 * len * ux, cy - 0.5 * len * uy);
                let (bx, by) = (cx + 0.5 * len * ux, cy + 0.5 * len * uy);
                let bounds = (ax.min(bx) - 1.0, ay.min(by) - 1.0, ax.max(bx) + 1.0, ay.max(by) + 1.0);
                splat(&mut layer, w, h, bounds, |px, py| {
                    // Distance to the segment, one-pixel linear falloff.
                    let (vx, vy) = (px - ax, py - ay);
                    let t = if len > 0.0 {
                        ((vx * ux + vy * uy) / len).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let (qx, qy) = (ax + t * len * ux, ay + t * len * uy);
                    let d = ((px - qx).powi(2) + (py - qy).powi(2)).sqrt();
                    alpha * (1.0 - d).max(0.0)
                });
            }
            Label::Snow => {
                let r = uniform(&mut rng, spec.radius);
                let bounds = (cx - r, cy - r, cx + r, cy + r);
                splat(&mut layer, w, h, bounds, |px, py| {
                    let d = ((px - cx).powi(2) + (py - cy).powi(2)).sqrt();
                    alpha * ((r - d) / (0.5 * r)).clamp(0.0, 1.0)
                });
            }
        }
    }
    let mut out = clean.clone();
    for c in 0..3 {
        let plane = &mut out.data[c * w * h..(c + 1) * w * h];
        plane.iter_mut().zip(&layer).for_each(|(v, a)| *v = (*v + a).clamp(0.0, 1.0));
    }
    Ok(out)
}
