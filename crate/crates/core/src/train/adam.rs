use crate::tensor::Tensor;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First and second moments of one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub name: String,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    /// Completed optimizer steps.
    pub step: u64,
    /// Empty until the first step, then one entry per parameter in order.
    pub moments: Vec<Moments>,
}

/// One Adam update with bias correction. `grads[i]` belongs to `params[i]`.
///
/// Parameters are replaced by fresh leaves holding the updated values.
pub fn adam_step(
    params: &mut [(String, &mut Tensor)],
    grads: &[Option<Vec<f64>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<(), TrainError> {
    if grads.len() != params.len() {
        return Err(TrainError::Optimizer(format!(
            "{} gradients for {} parameters",
            grads.len(),
            params.len()
        )));
    }
    let mut checked = Vec::with_capacity(params.len());
    for ((name, p), g) in params.iter().zip(grads) {
        let g = g
            .as_ref()
            .ok_or_else(|| TrainError::MissingGrad(name.clone()))?;
        if g.len() != p.len() {
            return Err(TrainError::Optimizer(format!(
                "{name}: gradient has {} values, parameter has {}",
                g.len(),
                p.len()
            )));
        }
        checked.push(g);
    }
    if state.moments.is_empty() {
        state.moments = params
            .iter()
            .map(|(name, p)| Moments {
                name: name.clone(),
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            })
            .collect();
    }
    if state.moments.len() != params.len()
        || state
            .moments
            .iter()
            .zip(params.iter())
            .any(|(m, (n, p))| &m.name != n || m.m.len() != p.len())
    {
        return Err(TrainError::Optimizer(
            "optimizer state does not match the parameter list".into(),
        ));
    }

    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for (((_, p), g), mo) in params.iter_mut().zip(checked).zip(&mut state.moments) {
        let mut data = p.data().to_vec();
        for i in 0..data.len() {
            mo.m[i] = cfg.beta1 * mo.m[i] + (1.0 - cfg.beta1) * g[i];
            mo.v[i] = cfg.beta2 * mo.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            let m_hat = mo.m[i] / bc1;
            let v_hat = mo.v[i] / bc2;
            data[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
        }
        **p = Tensor::param(p.shape(), data)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::param([1, 1, 1, 1], vec![v]).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let mut w = scalar_param(1.25);
        let mut state = AdamState::default();
        for _ in 0..5 {
            adam_step(
                &mut [("w".into(), &mut w)],
                &[Some(vec![0.0])],
                &mut state,
                &AdamConfig::default(),
            )
            .unwrap();
        }
        assert_eq!(w.item(), 1.25);
        assert_eq!(state.step, 5);
    }

    #[test]
    fn constant_gradient_steps_approach_lr() {
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut w = scalar_param(0.0);
        let mut state = AdamState::default();
        for _ in 0..200 {
            let before = w.item();
            adam_step(&mut [("w".into(), &mut w)], &[Some(vec![2.0])], &mut state, &cfg).unwrap();
            // Bias-corrected moments of a constant gradient are exact.
            let step = before - w.item();
            assert!((step - cfg.lr).abs() < 1e-9, "{step}");
        }
    }

    #[test]
    fn missing_gradient_names_the_parameter() {
        let mut a = scalar_param(0.0);
        let mut b = scalar_param(0.0);
        let err = adam_step(
            &mut [("a".into(), &mut a), ("fusion.conv1.bias".into(), &mut b)],
            &[Some(vec![1.0]), None],
            &mut AdamState::default(),
            &AdamConfig::default(),
        )
        .unwrap_err();
        assert!(err.to_string().contains("fusion.conv1.bias"), "{err}");
    }
}
