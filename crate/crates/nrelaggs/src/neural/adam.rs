//! Adam optimizer over a flat parameter vector.

use serde::{Deserialize, Serialize};

use super::Scalar;
use crate::error::NeuralError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First/second-moment state; update with bias correction:
/// `p -= α · m̂ / (√v̂ + ε)`.
#[derive(Clone, Debug)]
pub struct Adam<F: Scalar> {
    config: AdamConfig,
    m: Vec<F>,
    v: Vec<F>,
    t: u64,
}

impl<F: Scalar> Adam<F> {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam { config, m: vec![F::zero(); n_params], v: vec![F::zero(); n_params], t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [F], grads: &[F]) -> Result<(), NeuralError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(NeuralError::ShapeMismatch {
                context: "adam step".into(),
                expected: format!("{} parameters", self.m.len()),
                found: format!("{} params / {} grads", params.len(), grads.len()),
            });
        }
        self.t += 1;
        let b1 = F::from_f64(self.config.beta1);
        let b2 = F::from_f64(self.config.beta2);
        let one = F::one();
        let alpha = F::from_f64(self.config.learning_rate);
        let eps = F::from_f64(self.config.epsilon);
        let correction1 = one - F::from_f64(self.config.beta1.powi(self.t as i32));
        let correction2 = one - F::from_f64(self.config.beta2.powi(self.t as i32));
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (one - b1) * g;
            self.v[i] = b2 * self.v[i] + (one - b2) * g * g;
            let m_hat = self.m[i] / correction1;
            let v_hat = self.v[i] / correction2;
            params[i] = params[i] - alpha * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
