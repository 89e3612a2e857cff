use serde::{Deserialize, Serialize};

use crate::float::Float;
use crate::param::ParamStore;
use crate::tensor::Tensor;

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

/// One bias-corrected Adam update in place. `t` is the 1-based step count.
pub fn adam_update<T: Float>(
    value: &mut [T],
    grad: &[T],
    m: &mut [T],
    v: &mut [T],
    cfg: &AdamConfig,
    t: u64,
) {
    assert!(t >= 1, "adam step count starts at 1");
    let b1 = T::from_f64_lossy(cfg.beta1);
    let b2 = T::from_f64_lossy(cfg.beta2);
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    // Folding both corrections into the step size.
    let step = T::from_f64_lossy(cfg.lr * c2.sqrt() / c1);
    let eps = T::from_f64_lossy(cfg.eps * c2.sqrt());
    for i in 0..value.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (T::one() - b1) * g;
        v[i] = b2 * v[i] + (T::one() - b2) * g * g;
        value[i] -= step * m[i] / (v[i].sqrt() + eps);
    }
}

/// Adam state for every parameter of a store.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, store: &ParamStore<T>) -> Self {
        let zeros = || -> Vec<Tensor<T>> {
            store
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.shape()))
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// Applies one update to every trainable parameter from its gradient buffer.
    pub fn step(&mut self, store: &mut ParamStore<T>) {
        self.step += 1;
        for ((_, p), (m, v)) in store.iter_mut().zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            if !p.trainable {
                continue;
            }
            adam_update(
                p.value.data_mut(),
                p.grad.data(),
                m.data_mut(),
                v.data_mut(),
                &self.config,
                self.step,
            );
        }
    }
}
