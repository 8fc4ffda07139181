//! Restoration networks: the dual recursive branch, cross-stitch units and
//! the two-branch model with its fusion head.

mod cmudrn;
mod drn;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::tensor::{self, ConvSpec, Tensor, TensorError};

pub use cmudrn::{cmudrn_forward, init_params, CmudrnOutput, CmudrnParams, FusionParams, StitchPoint};
pub use drn::{drn_forward, DrnOutput, DrnParams, ResidualBlock};

/// Feature width of each branch unless configured otherwise.
pub const DEFAULT_CHANNELS: usize = 16;
/// Width of the fusion head's hidden layers.
pub const FUSION_CHANNELS: usize = 16;
pub const KERNEL: usize = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NetError>;

/// One convolution with its trainable weight and bias.
#[derive(Debug, Clone)]
pub struct ConvLayer {
    pub spec: ConvSpec,
    pub weight: Tensor,
    pub bias: Tensor,
}

impl ConvLayer {
    /// Weights uniform in `[-a, a]`, `a = sqrt(1 / fan_in)`; zero bias.
    pub fn init(spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let a = (1.0 / spec.fan_in() as f64).sqrt();
        let n = tensor::numel(&spec.weight_shape());
        let w = (0..n).map(|_| rng.gen_range(-a..=a)).collect();
        Self::from_parts(spec, w, vec![0.0; spec.out_channels])
    }

    pub fn zeros(spec: ConvSpec) -> Self {
        let n = tensor::numel(&spec.weight_shape());
        Self::from_parts(spec, vec![0.0; n], vec![0.0; spec.out_channels])
    }

    pub fn from_parts(spec: ConvSpec, weight: Vec<f64>, bias: Vec<f64>) -> Self {
        ConvLayer {
            spec,
            weight: Tensor::param(spec.weight_shape(), weight).expect("weight length matches spec"),
            bias: Tensor::param(spec.bias_shape(), bias).expect("bias length matches spec"),
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(tensor::conv2d(x, &self.weight, &self.bias, &self.spec)?)
    }
}

/// `alpha * a + (1 - alpha) * b`.
pub fn cross_stitch(a: &Tensor, b: &Tensor, alpha: f64) -> Result<Tensor> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(NetError::Config(format!("alpha_s {alpha} outside [0, 1]")));
    }
    Ok(tensor::add(&tensor::scale(a, alpha), &tensor::scale(b, 1.0 - alpha))?)
}

/// Named view over every convolution, in a fixed order.
pub trait Layers {
    fn layers(&self) -> Vec<(String, &ConvLayer)>;
    fn layers_mut(&mut self) -> Vec<(String, &mut ConvLayer)>;

    /// `(name, tensor)` for every weight and bias, e.g. `rain.f_in.weight`.
    fn parameters(&self) -> Vec<(String, &Tensor)> {
        self.layers()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &l.weight),
                    (format!("{name}.bias"), &l.bias),
                ]
            })
            .collect()
    }

    fn parameters_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers_mut()
            .into_iter()
            .flat_map(|(name, l)| {
                [
                    (format!("{name}.weight"), &mut l.weight),
                    (format!("{name}.bias"), &mut l.bias),
                ]
            })
            .collect()
    }

    fn num_parameters(&self) -> usize {
        self.parameters().iter().map(|(_, t)| t.len()).sum()
    }

    fn clear_grads(&self) {
        for (_, t) in self.parameters() {
            t.clear_grad();
        }
    }
}

fn check_rgb(op: &'static str, y: &Tensor) -> Result<()> {
    tensor::check_dim(op, "input channels", 3, y.shape()[1])?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Tensor {
        Tensor::full([1, 2, 3, 3], v).unwrap()
    }

    #[test]
    fn cross_stitch_endpoint_and_midpoint() {
        let a = Tensor::new([1, 1, 1, 3], vec![0.1, -2.0, 7.5]).unwrap();
        let b = Tensor::new([1, 1, 1, 3], vec![3.0, 4.0, -1.0]).unwrap();
        assert_eq!(cross_stitch(&a, &b, 1.0).unwrap().data(), a.data());
        assert_eq!(cross_stitch(&a, &b, 0.0).unwrap().data(), b.data());
        assert_eq!(cross_stitch(&a, &a, 0.5).unwrap().data(), a.data());
        let mid = cross_stitch(&t(2.0), &t(4.0), 0.5).unwrap();
        assert!(mid.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn cross_stitch_rejects_bad_inputs() {
        assert!(matches!(
            cross_stitch(&t(1.0), &t(1.0), 1.5),
            Err(NetError::Config(_))
        ));
        let other = Tensor::zeros([1, 3, 3, 3]).unwrap();
        assert!(matches!(
            cross_stitch(&t(1.0), &other, 0.5),
            Err(NetError::Tensor(TensorError::Shape { .. }))
        ));
    }
}
