//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Adam<S: Scalar> {
    pub config: AdamConfig,
    step: u64,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
}

impl<S: Scalar> Adam<S> {
    pub fn new(config: AdamConfig, params: &[Parameter<S>]) -> Self {
        Self {
            config,
            step: 0,
            first: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
            second: params.iter().map(|p| vec![S::zero(); p.numel()]).collect(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update from the gradients currently stored on `params`.
    /// Frozen parameters and parameters without a gradient are skipped.
    /// A non-finite gradient aborts before anything is modified.
    pub fn step(&mut self, params: &[Parameter<S>]) -> Result<()> {
        if params.len() != self.first.len()
            || params.iter().zip(&self.first).any(|(p, m)| p.numel() != m.len())
        {
            return Err(Error::Contract(
                "optimizer state does not match the parameter set".into(),
            ));
        }
        for p in params {
            if let Some(g) = p.tensor.grad() {
                if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!(
                        "gradient of {} at element {i} is {}",
                        p.name, g[i]
                    )));
                }
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (S::of(beta1), S::of(beta2));
        let (step_size, bc2_sqrt, eps) = (S::of(lr / bc1), S::of(bc2.sqrt()), S::of(eps));
        for ((p, m), v) in params.iter().zip(&mut self.first).zip(&mut self.second) {
            if !p.is_trainable() {
                continue;
            }
            let Some(g) = p.tensor.grad() else { continue };
            let mut w = p.tensor.data_mut();
            for i in 0..g.len() {
                m[i] = b1 * m[i] + (S::one() - b1) * g[i];
                v[i] = b2 * v[i] + (S::one() - b2) * g[i] * g[i];
                w[i] -= step_size * m[i] / (v[i].sqrt() / bc2_sqrt + eps);
            }
        }
        Ok(())
    }
}
