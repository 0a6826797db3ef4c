use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub step_size: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            step_size: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.step_size > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::InvalidArgument(format!("invalid Adam settings {self:?}")))
        }
    }
}

/// Moment estimates of one Adam run; minimizes, i.e. steps against the gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, dim: usize) -> Self {
        Self {
            config,
            first_moment: vec![0.0; dim],
            second_moment: vec![0.0; dim],
            t: 0,
        }
    }

    /// One bias-corrected update of `params` given the gradient of the loss.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        assert_eq!(params.len(), self.first_moment.len(), "Adam parameter dimension");
        assert_eq!(grad.len(), self.first_moment.len(), "Adam gradient dimension");
        let AdamConfig {
            step_size,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grad[i];
            self.first_moment[i] = beta1 * self.first_moment[i] + (1.0 - beta1) * g;
            self.second_moment[i] = beta2 * self.second_moment[i] + (1.0 - beta2) * g * g;
            let m_hat = self.first_moment[i] / c1;
            let v_hat = self.second_moment[i] / c2;
            params[i] -= step_size * m_hat / (v_hat.sqrt() + epsilon);
        }
    }
}
