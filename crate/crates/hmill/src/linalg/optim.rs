use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam optimizer state: step counter and per-parameter moment estimates in
/// the model's canonical parameter order.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    /// Defaults: alpha 0.001, beta1 0.9, beta2 0.999, epsilon 1e-8.
    pub fn new(param_count: usize) -> Self {
        AdamState::with_hyperparams(param_count, 0.001, 0.9, 0.999, 1e-8)
    }

    pub fn with_hyperparams(
        param_count: usize,
        alpha: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    ) -> Self {
        AdamState {
            step: 0,
            first_moment: vec![0.0; param_count],
            second_moment: vec![0.0; param_count],
            alpha,
            beta1,
            beta2,
            epsilon,
        }
    }

    /// One bias-corrected update applied in place to `params`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: format!("{} state entries", self.first_moment.len()),
                right: format!("{} params / {} grads", params.len(), grads.len()),
            });
        }
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.first_moment[i] = self.beta1 * self.first_moment[i] + (1.0 - self.beta1) * g;
            self.second_moment[i] =
                self.beta2 * self.second_moment[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.first_moment[i] / bc1;
            let v_hat = self.second_moment[i] / bc2;
            params[i] -= self.alpha * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}
