//! Adam with bias correction; moments are kept in `f32`.

use serde::{Deserialize, Serialize};

use crate::vae::Real;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    /// First moments, one buffer per parameter tensor.
    pub m: Vec<Vec<f32>>,
    /// Second moments.
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        Self {
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Advances the step counter; call once per optimizer step before [`AdamState::update`].
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates tensor `slot` in place from its gradient.
    pub fn update<T: Real>(&mut self, slot: usize, hyper: &AdamHyper, param: &mut [T], grad: &[T]) {
        let t = self.step.max(1) as i32;
        let c1 = 1.0 - hyper.beta1.powi(t);
        let c2 = 1.0 - hyper.beta2.powi(t);
        let (b1, b2) = (hyper.beta1 as f32, hyper.beta2 as f32);
        let m = &mut self.m[slot];
        let v = &mut self.v[slot];
        for i in 0..param.len() {
            let g = grad[i].as_f64() as f32;
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] as f64 / c1;
            let v_hat = v[i] as f64 / c2;
            let delta = hyper.learning_rate * m_hat / (v_hat.sqrt() + hyper.eps);
            param[i] = T::lit(param[i].as_f64() - delta);
        }
    }
}
