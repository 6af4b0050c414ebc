//! Adam with bias correction.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub hyper: AdamHyper,
}

impl OptimizerState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            hyper,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr: f64) {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), params.len());
        self.step += 1;
        let AdamHyper {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.hyper;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(&mut self.first_moment)
            .zip(&mut self.second_moment)
        {
            let g = g + weight_decay * *p;
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
