use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::ParamStore;
use crate::math::sqrt;
use crate::{Error, Result};

/// Adam with optional global-norm gradient clipping.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub clip_norm: Option<f64>,
    pub step_count: u64,
    #[serde(skip)]
    m: Vec<Vec<f64>>,
    #[serde(skip)]
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Result<Self> {
        // also rejects NaN
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(learning_rate > 0.0) {
            return Err(Error::Config(alloc::format!("learning rate must be positive, got {learning_rate}")));
        }
        Ok(Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, clip_norm: None, step_count: 0, m: Vec::new(), v: Vec::new() })
    }

    pub fn with_clip(mut self, norm: f64) -> Self {
        self.clip_norm = Some(norm);
        self
    }

    /// Applies one update from the accumulated gradients, then zeroes them.
    pub fn step(&mut self, store: &mut ParamStore) {
        if self.m.len() != store.len() {
            self.m = store.iter().map(|p| alloc::vec![0.0; p.tensor.numel()]).collect();
            self.v = self.m.clone();
        }
        let mut scale = 1.0;
        if let Some(max) = self.clip_norm {
            let norm = store.grad_norm();
            if norm > max {
                scale = max / norm;
            }
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, t as f64);
        let lr = self.learning_rate;
        for (i, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            let grads = p.gradient.data_mut();
            let vals = p.tensor.data_mut();
            for j in 0..vals.len() {
                let g = grads[j] * scale;
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                vals[j] -= lr * mhat / (sqrt(vhat) + self.epsilon);
                grads[j] = 0.0;
            }
        }
    }
}
