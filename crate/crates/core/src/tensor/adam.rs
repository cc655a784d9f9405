use super::{Float, ParamSet};
use crate::error::{Error, Result};

/// Adam hyperparameters. Weight decay is decoupled: each step subtracts
/// `weight_decay · lr · θ` in addition to the adaptive update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-3,
        }
    }
}

/// Moment buffers for one [`ParamSet`].
#[derive(Debug, Clone)]
pub struct AdamState<T = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Float> AdamState<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| vec![T::zero(); t.numel()])
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one bias-corrected update using the gradients stored on the
    /// parameters. Nothing is modified if any gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Parameter(format!(
                "optimizer tracks {} tensors, parameter set has {}",
                self.m.len(),
                params.len()
            )));
        }
        for ((_, name, t), m) in params.iter().zip(&self.m) {
            if t.numel() != m.len() {
                return Err(Error::Parameter(format!(
                    "{name} has {} elements, optimizer state has {}",
                    t.numel(),
                    m.len()
                )));
            }
            if let Some(g) = t.grad() {
                if let Some(index) = g.iter().position(|x| !x.is_finite()) {
                    return Err(Error::NonFinite {
                        context: format!("gradient of {name}"),
                        index,
                    });
                }
            }
        }

        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr, eps, decay) = (T::of(c.lr), T::of(c.eps), T::of(c.weight_decay * c.lr));

        for ((tensor, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(grad) = tensor.grad().map(<[T]>::to_vec) else {
                continue;
            };
            for (((theta, &g), m), v) in tensor
                .data_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *theta = *theta - lr * m_hat / (v_hat.sqrt() + eps) - decay * *theta;
            }
        }
        Ok(())
    }
}
