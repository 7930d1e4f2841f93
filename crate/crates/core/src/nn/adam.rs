use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::Param;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments<T: Real> {
    pub m: Tensor<T>,
    pub v: Tensor<T>,
}

/// Adaptive-moment optimiser. Moments are keyed by parameter name so
/// they can be checkpointed alongside the weights.
#[derive(Debug, Clone)]
pub struct Adam<T: Real> {
    pub config: AdamConfig,
    pub steps: u64,
    pub moments: BTreeMap<String, AdamMoments<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    /// Begin an optimiser step; call [`Adam::update`] for every parameter.
    pub fn begin_step(&mut self) {
        self.steps += 1;
    }

    pub fn update(&mut self, name: &str, p: &mut Param<T>) {
        let c = self.config;
        let t = self.steps.max(1) as i32;
        let b1 = T::from_f64_lossy(c.beta1);
        let b2 = T::from_f64_lossy(c.beta2);
        let bc1 = T::from_f64_lossy(1.0 - c.beta1.powi(t));
        let bc2 = T::from_f64_lossy(1.0 - c.beta2.powi(t));
        let lr = T::from_f64_lossy(c.lr);
        let eps = T::from_f64_lossy(c.eps);
        let mom = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| AdamMoments {
                m: Tensor::zeros(p.value.shape()),
                v: Tensor::zeros(p.value.shape()),
            });
        let values = p.value.data_mut();
        let grads = p.grad.data();
        let m = mom.m.data_mut();
        let v = mom.v.data_mut();
        for i in 0..values.len() {
            let g = grads[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            values[i] = values[i] - lr * mhat / (vhat.sqrt() + eps);
        }
    }
}
