use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    check_rgb, cross_stitch, ConvLayer, DrnOutput, DrnParams, Layers, NetError, Result,
    FUSION_CHANNELS, KERNEL,
};
use crate::tensor::{self, ConvSpec, Tensor};

/// Where the two branches exchange features inside each outer step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StitchPoint {
    /// After each branch's input convolution.
    AfterInput,
    /// After each branch's residual loop.
    AfterRecursive,
}

/// `conv3(relu(conv2(relu(conv1(x)))))` over the 6-channel concatenation of
/// both branch outputs.
#[derive(Debug, Clone)]
pub struct FusionParams {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub conv3: ConvLayer,
}

impl FusionParams {
    pub fn init(rng: &mut ChaCha8Rng) -> Self {
        FusionParams {
            conv1: ConvLayer::init(ConvSpec::same(6, FUSION_CHANNELS, KERNEL), rng),
            conv2: ConvLayer::init(ConvSpec::same(FUSION_CHANNELS, FUSION_CHANNELS, KERNEL), rng),
            conv3: ConvLayer::init(ConvSpec::same(FUSION_CHANNELS, 3, KERNEL), rng),
        }
    }

    /// Averages the two branch images and passes the mean through.
    /// Exact for non-negative inputs.
    pub fn passthrough() -> Self {
        let centre = KERNEL / 2;
        let tap = |o: usize, i: usize, cin: usize| ((o * cin + i) * KERNEL + centre) * KERNEL + centre;
        let mut f = FusionParams {
            conv1: ConvLayer::zeros(ConvSpec::same(6, FUSION_CHANNELS, KERNEL)),
            conv2: ConvLayer::zeros(ConvSpec::same(FUSION_CHANNELS, FUSION_CHANNELS, KERNEL)),
            conv3: ConvLayer::zeros(ConvSpec::same(FUSION_CHANNELS, 3, KERNEL)),
        };
        let mut w1 = vec![0.0; f.conv1.weight.len()];
        let mut w2 = vec![0.0; f.conv2.weight.len()];
        let mut w3 = vec![0.0; f.conv3.weight.len()];
        for c in 0..3 {
            w1[tap(c, c, 6)] = 0.5;
            w1[tap(c, c + 3, 6)] = 0.5;
            w2[tap(c, c, FUSION_CHANNELS)] = 1.0;
            w3[tap(c, c, FUSION_CHANNELS)] = 1.0;
        }
        f.conv1 = ConvLayer::from_parts(f.conv1.spec, w1, vec![0.0; FUSION_CHANNELS]);
        f.conv2 = ConvLayer::from_parts(f.conv2.spec, w2, vec![0.0; FUSION_CHANNELS]);
        f.conv3 = ConvLayer::from_parts(f.conv3.spec, w3, vec![0.0; 3]);
        f
    }

    pub fn validate(&self) -> Result<()> {
        let chain = [
            (self.conv1.spec, 6, FUSION_CHANNELS),
            (self.conv2.spec, FUSION_CHANNELS, FUSION_CHANNELS),
            (self.conv3.spec, FUSION_CHANNELS, 3),
        ];
        for (i, (spec, cin, cout)) in chain.into_iter().enumerate() {
            if spec.in_channels != cin || spec.out_channels != cout {
                return Err(NetError::Config(format!(
                    "fusion conv{} must map {cin}->{cout}, got {}->{}",
                    i + 1,
                    spec.in_channels,
                    spec.out_channels
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, rain: &Tensor, snow: &Tensor) -> Result<Tensor> {
        self.validate()?;
        let x = tensor::concat_channels(rain, snow)?;
        let h = tensor::relu(&self.conv1.forward(&x)?);
        let h = tensor::relu(&self.conv2.forward(&h)?);
        self.conv3.forward(&h)
    }
}

impl Layers for FusionParams {
    fn layers(&self) -> Vec<(String, &ConvLayer)> {
        vec![
            ("conv1".into(), &self.conv1),
            ("conv2".into(), &self.conv2),
            ("conv3".into(), &self.conv3),
        ]
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut ConvLayer)> {
        vec![
            ("conv1".into(), &mut self.conv1),
            ("conv2".into(), &mut self.conv2),
            ("conv3".into(), &mut self.conv3),
        ]
    }
}

/// Rain branch, snow branch and fusion head.
#[derive(Debug, Clone)]
pub struct CmudrnParams {
    pub rain: DrnParams,
    pub snow: DrnParams,
    pub fusion: FusionParams,
    pub alpha_s: f64,
    pub stitch_enabled: bool,
    pub stitch_points: Vec<StitchPoint>,
}

/// Deterministic initialization: rain branch, then snow branch, then fusion
/// head, all from one ChaCha stream seeded with `seed`.
pub fn init_params(seed: u64, channels: usize, loops: usize) -> CmudrnParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CmudrnParams {
        rain: DrnParams::init(channels, loops, &mut rng),
        snow: DrnParams::init(channels, loops, &mut rng),
        fusion: FusionParams::init(&mut rng),
        alpha_s: 0.5,
        stitch_enabled: true,
        stitch_points: vec![StitchPoint::AfterInput, StitchPoint::AfterRecursive],
    }
}

impl CmudrnParams {
    /// Branch outputs equal the input (zero output layers) and the fusion
    /// head passes their mean through, so the model is the identity on
    /// images in `[0, inf)`. Hidden layers stay randomly initialized.
    pub fn identity_forced(seed: u64, channels: usize, loops: usize) -> Self {
        let mut p = init_params(seed, channels, loops);
        p.rain.f_out = ConvLayer::zeros(p.rain.f_out.spec);
        p.snow.f_out = ConvLayer::zeros(p.snow.f_out.spec);
        p.fusion = FusionParams::passthrough();
        p
    }

    pub fn loops(&self) -> usize {
        self.rain.loops
    }

    pub fn channels(&self) -> usize {
        self.rain.channels()
    }

    /// Sets the loop count of both branches.
    pub fn set_loops(&mut self, loops: usize) {
        self.rain.loops = loops;
        self.snow.loops = loops;
    }

    pub fn validate(&self) -> Result<()> {
        self.rain.validate()?;
        self.snow.validate()?;
        self.fusion.validate()?;
        if self.rain.loops != self.snow.loops {
            return Err(NetError::Config(format!(
                "branch loop counts differ: rain {} vs snow {}",
                self.rain.loops, self.snow.loops
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha_s) {
            return Err(NetError::Config(format!(
                "alpha_s {} outside [0, 1]",
                self.alpha_s
            )));
        }
        Ok(())
    }

    fn stitches_at(&self, point: StitchPoint) -> bool {
        self.stitch_enabled && self.stitch_points.contains(&point)
    }
}

impl Layers for CmudrnParams {
    fn layers(&self) -> Vec<(String, &ConvLayer)> {
        let mut v = Vec::new();
        for (prefix, part) in [
            ("rain", &self.rain as &dyn Layers),
            ("snow", &self.snow),
            ("fusion", &self.fusion),
        ] {
            v.extend(
                part.layers()
                    .into_iter()
                    .map(|(n, l)| (format!("{prefix}.{n}"), l)),
            );
        }
        v
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut ConvLayer)> {
        let mut v = Vec::new();
        for (prefix, part) in [
            ("rain", &mut self.rain as &mut dyn Layers),
            ("snow", &mut self.snow),
            ("fusion", &mut self.fusion),
        ] {
            v.extend(
                part.layers_mut()
                    .into_iter()
                    .map(|(n, l)| (format!("{prefix}.{n}"), l)),
            );
        }
        v
    }
}

#[derive(Debug, Clone)]
pub struct CmudrnOutput {
    pub fused: Tensor,
    pub rain: DrnOutput,
    pub snow: DrnOutput,
}

fn stitch_pair(a: &Tensor, b: &Tensor, alpha: f64) -> Result<(Tensor, Tensor)> {
    Ok((cross_stitch(a, b, alpha)?, cross_stitch(b, a, alpha)?))
}

/// Runs both branches in lock-step on the same degraded image `y` and fuses
/// their outputs.
pub fn cmudrn_forward(params: &CmudrnParams, y: &Tensor) -> Result<CmudrnOutput> {
    check_rgb("cmudrn_forward", y)?;
    params.validate()?;
    let (rain, snow, alpha) = (&params.rain, &params.snow, params.alpha_s);
    let loops = params.loops();
    let (mut xr, mut xs) = (y.clone(), y.clone());
    let mut rain_steps = Vec::with_capacity(loops);
    let mut snow_steps = Vec::with_capacity(loops);
    for _ in 0..loops {
        let mut hr = rain.input_features(&xr)?;
        let mut hs = snow.input_features(&xs)?;
        if params.stitches_at(StitchPoint::AfterInput) {
            (hr, hs) = stitch_pair(&hr, &hs, alpha)?;
        }
        hr = rain.recursive(&hr)?;
        hs = snow.recursive(&hs)?;
        if params.stitches_at(StitchPoint::AfterRecursive) {
            (hr, hs) = stitch_pair(&hr, &hs, alpha)?;
        }
        xr = rain.output(y, &hr)?;
        xs = snow.output(y, &hs)?;
        rain_steps.push(xr.clone());
        snow_steps.push(xs.clone());
    }
    let fused = params.fusion.forward(&xr, &xs)?;
    Ok(CmudrnOutput {
        fused,
        rain: DrnOutput {
            output: xr,
            intermediates: rain_steps,
        },
        snow: DrnOutput {
            output: xs,
            intermediates: snow_steps,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::drn_forward;
    use rand::Rng;

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tensor::numel(&shape);
        Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn stitch_off_matches_independent_branches() {
        let mut p = init_params(11, 8, 2);
        p.stitch_enabled = false;
        let y = random_input([1, 3, 8, 8], 12);
        let out = cmudrn_forward(&p, &y).unwrap();
        let r = drn_forward(&p.rain, &y).unwrap();
        let s = drn_forward(&p.snow, &y).unwrap();
        assert_eq!(out.rain.output.data(), r.output.data());
        assert_eq!(out.snow.output.data(), s.output.data());
        for (a, b) in out.rain.intermediates.iter().zip(&r.intermediates) {
            assert_eq!(a.data(), b.data());
        }
        let fused = p.fusion.forward(&r.output, &s.output).unwrap();
        assert_eq!(out.fused.data(), fused.data());
    }

    #[test]
    fn identical_branches_stay_identical_under_stitching() {
        let mut p = init_params(13, 8, 2);
        p.snow = p.rain.clone();
        let y = random_input([1, 3, 8, 8], 14);
        let out = cmudrn_forward(&p, &y).unwrap();
        assert_eq!(out.rain.output.data(), out.snow.output.data());
    }

    #[test]
    fn stitching_changes_outputs_for_distinct_branches() {
        let p = init_params(15, 8, 2);
        let mut off = p.clone();
        off.stitch_enabled = false;
        let y = random_input([1, 3, 8, 8], 16);
        let a = cmudrn_forward(&p, &y).unwrap();
        let b = cmudrn_forward(&off, &y).unwrap();
        assert_ne!(a.rain.output.data(), b.rain.output.data());
    }

    #[test]
    fn fused_shape_matches_input() {
        let p = init_params(17, 4, 1);
        let y = random_input([2, 3, 10, 6], 18);
        let out = cmudrn_forward(&p, &y).unwrap();
        assert_eq!(out.fused.shape(), [2, 3, 10, 6]);
    }

    #[test]
    fn identity_forced_model_is_identity() {
        let p = CmudrnParams::identity_forced(19, 8, 3);
        let y = random_input([1, 3, 8, 8], 20);
        let out = cmudrn_forward(&p, &y).unwrap();
        assert_eq!(out.fused.data(), y.data());
    }

    #[test]
    fn fusion_chain_is_enforced() {
        let mut p = init_params(21, 4, 1);
        p.fusion.conv2 = ConvLayer::zeros(ConvSpec::same(16, 8, 3));
        assert!(matches!(p.validate(), Err(NetError::Config(_))));
        let mut p = init_params(21, 4, 1);
        p.snow.loops = 2;
        assert!(p.validate().is_err());
    }

    #[test]
    fn parameter_names_are_unique_and_ordered() {
        let p = init_params(0, 4, 1);
        let names: Vec<String> = p.parameters().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), 2 * (6 + 6 + 3));
        assert_eq!(names[0], "rain.f_in.weight");
        assert_eq!(names.last().unwrap(), "fusion.conv3.bias");
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
    }
}
