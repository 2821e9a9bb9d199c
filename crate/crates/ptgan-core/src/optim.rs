//! Adam optimizer with externally stored per-parameter state.

use crate::tensor::Tensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64, beta1: f64, beta2: f64, param_shapes: &[Vec<usize>]) -> Self {
        let zeros = |shapes: &[Vec<usize>]| {
            shapes
                .iter()
                .map(|s| vec![0.0; s.iter().product()])
                .collect::<Vec<_>>()
        };
        AdamState {
            lr,
            beta1,
            beta2,
            eps: 1e-8,
            step: 0,
            first_moment: zeros(param_shapes),
            second_moment: zeros(param_shapes),
        }
    }

    /// Advances the shared step counter; call once per optimizer step before
    /// updating the individual parameters.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Applies the update for parameter `idx`. `lr_scale` supports schedules;
    /// 1.0 means the configured rate.
    pub fn update(&mut self, idx: usize, param: &mut Tensor, grad: &Tensor, lr_scale: f64) {
        debug_assert_eq!(param.len(), grad.len());
        let t = self.step as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        let lr = self.lr * lr_scale;
        let m = &mut self.first_moment[idx];
        let v = &mut self.second_moment[idx];
        for ((p, &g), (mi, vi)) in param
            .data_mut()
            .iter_mut()
            .zip(grad.data())
            .zip(m.iter_mut().zip(v.iter_mut()))
        {
            *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
            *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
            let m_hat = *mi / bias1;
            let v_hat = *vi / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
