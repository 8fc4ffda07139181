use rand_chacha::ChaCha8Rng;

use super::{check_rgb, ConvLayer, Layers, NetError, Result, KERNEL};
use crate::tensor::{self, ConvSpec, Tensor};

/// `relu(x + conv2(relu(conv1(x))))`.
#[derive(Debug, Clone)]
pub struct ResidualBlock {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

impl ResidualBlock {
    pub fn init(channels: usize, rng: &mut ChaCha8Rng) -> Self {
        let spec = ConvSpec::same(channels, channels, KERNEL);
        ResidualBlock {
            conv1: ConvLayer::init(spec, rng),
            conv2: ConvLayer::init(spec, rng),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let h = tensor::relu(&self.conv1.forward(x)?);
        let h = self.conv2.forward(&h)?;
        Ok(tensor::relu(&tensor::add(x, &h)?))
    }
}

/// One dual recursive branch.
///
/// Each outer step computes `x' = y + f_out(f_recursive(f_in(x)))`, where
/// `f_recursive` applies the residual pair `loops` times with shared weights.
#[derive(Debug, Clone)]
pub struct DrnParams {
    pub f_in: ConvLayer,
    pub res1: ResidualBlock,
    pub res2: ResidualBlock,
    pub f_out: ConvLayer,
    /// Shared intra- and inter-loop count.
    pub loops: usize,
}

impl DrnParams {
    pub fn init(channels: usize, loops: usize, rng: &mut ChaCha8Rng) -> Self {
        DrnParams {
            f_in: ConvLayer::init(ConvSpec::same(3, channels, KERNEL), rng),
            res1: ResidualBlock::init(channels, rng),
            res2: ResidualBlock::init(channels, rng),
            f_out: ConvLayer::init(ConvSpec::same(channels, 3, KERNEL), rng),
            loops,
        }
    }

    pub fn channels(&self) -> usize {
        self.f_in.spec.out_channels
    }

    pub fn validate(&self) -> Result<()> {
        if self.loops == 0 {
            return Err(NetError::Config("loop count must be at least 1".into()));
        }
        Ok(())
    }

    /// `relu(conv(x))`.
    pub fn input_features(&self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::relu(&self.f_in.forward(x)?))
    }

    /// The intra-loop: residual pair applied `loops` times.
    pub fn recursive(&self, h: &Tensor) -> Result<Tensor> {
        let mut h = h.clone();
        for _ in 0..self.loops {
            h = self.res1.forward(&h)?;
            h = self.res2.forward(&h)?;
        }
        Ok(h)
    }

    /// `y + f_out(h)`.
    pub fn output(&self, y: &Tensor, h: &Tensor) -> Result<Tensor> {
        Ok(tensor::add(y, &self.f_out.forward(h)?)?)
    }
}

impl Layers for DrnParams {
    fn layers(&self) -> Vec<(String, &ConvLayer)> {
        vec![
            ("f_in".into(), &self.f_in),
            ("res1.conv1".into(), &self.res1.conv1),
            ("res1.conv2".into(), &self.res1.conv2),
            ("res2.conv1".into(), &self.res2.conv1),
            ("res2.conv2".into(), &self.res2.conv2),
            ("f_out".into(), &self.f_out),
        ]
    }

    fn layers_mut(&mut self) -> Vec<(String, &mut ConvLayer)> {
        vec![
            ("f_in".into(), &mut self.f_in),
            ("res1.conv1".into(), &mut self.res1.conv1),
            ("res1.conv2".into(), &mut self.res1.conv2),
            ("res2.conv1".into(), &mut self.res2.conv1),
            ("res2.conv2".into(), &mut self.res2.conv2),
            ("f_out".into(), &mut self.f_out),
        ]
    }
}

#[derive(Debug, Clone)]
pub struct DrnOutput {
    pub output: Tensor,
    /// Estimates after each outer step; the last one is `output`.
    pub intermediates: Vec<Tensor>,
}

/// Unrolls the outer recurrence `loops` times starting from `x = y`.
pub fn drn_forward(params: &DrnParams, y: &Tensor) -> Result<DrnOutput> {
    check_rgb("drn_forward", y)?;
    params.validate()?;
    let mut x = y.clone();
    let mut intermediates = Vec::with_capacity(params.loops);
    for _ in 0..params.loops {
        let h = params.input_features(&x)?;
        let h = params.recursive(&h)?;
        x = params.output(y, &h)?;
        intermediates.push(x.clone());
    }
    Ok(DrnOutput {
        output: x,
        intermediates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn random_input(shape: [usize; 4], seed: u64) -> Tensor {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = tensor::numel(&shape);
        Tensor::new(shape, (0..n).map(|_| rng.gen::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_output_layer_collapses_to_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p = DrnParams::init(8, 3, &mut rng);
        p.f_out = ConvLayer::zeros(p.f_out.spec);
        let y = random_input([1, 3, 8, 8], 2);
        let out = drn_forward(&p, &y).unwrap();
        assert_eq!(out.output.data(), y.data());
        assert_eq!(out.intermediates.len(), 3);
        for x in &out.intermediates {
            assert_eq!(x.data(), y.data());
        }
    }

    #[test]
    fn loop_count_changes_the_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p1 = DrnParams::init(8, 1, &mut rng);
        let p2 = DrnParams { loops: 2, ..p1.clone() };
        let y = random_input([1, 3, 8, 8], 4);
        let a = drn_forward(&p1, &y).unwrap().output;
        let b = drn_forward(&p2, &y).unwrap().output;
        let diff: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "T=1 and T=2 agree: {diff}");
    }

    #[test]
    fn shape_is_preserved_for_all_loop_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let base = DrnParams::init(4, 1, &mut rng);
        let y = random_input([2, 3, 16, 16], 6);
        for loops in 1..=7 {
            let p = DrnParams { loops, ..base.clone() };
            let out = drn_forward(&p, &y).unwrap();
            assert_eq!(out.output.shape(), [2, 3, 16, 16]);
            assert_eq!(out.intermediates.len(), loops);
        }
    }

    #[test]
    fn rejects_non_rgb_and_zero_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let p = DrnParams::init(4, 2, &mut rng);
        let gray = Tensor::zeros([1, 1, 8, 8]).unwrap();
        assert!(matches!(drn_forward(&p, &gray), Err(NetError::Tensor(_))));
        let zero = DrnParams { loops: 0, ..p };
        let y = Tensor::zeros([1, 3, 8, 8]).unwrap();
        assert!(matches!(drn_forward(&zero, &y), Err(NetError::Config(_))));
    }
}
