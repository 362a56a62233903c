use serde::{Deserialize, Serialize};

use crate::error::{check_len, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, len: usize) -> Self {
        Self {
            config,
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn update(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        check_len("Adam parameters", self.m.len(), params.len())?;
        check_len("Adam gradients", self.m.len(), grads.len())?;
        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let c1 = 1.0 - beta1.powf(self.step as f64);
        let c2 = 1.0 - beta2.powf(self.step as f64);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            *p -= learning_rate * (*m / c1) / ((*v / c2).sqrt() + epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Three steps worked by hand with lr 0.1, gradients 1, -2, 0.5.
    #[test]
    fn hand_stepped_three_updates() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut opt = Adam::new(cfg, 1);
        let mut p = [1.0];

        // m1 = 0.1, v1 = 0.001; mhat = 1, vhat = 1.
        opt.update(&mut p, &[1.0]).unwrap();
        let p1 = 1.0 - 0.1 * 1.0 / (1.0 + 1e-8);
        assert!((p[0] - p1).abs() < 1e-15);

        // m2 = 0.09 - 0.2 = -0.11, v2 = 0.000999 + 0.004 = 0.004999.
        opt.update(&mut p, &[-2.0]).unwrap();
        let (m2, v2) = (-0.11, 0.004999);
        let p2 = p1 - 0.1 * (m2 / (1.0 - 0.81)) / ((v2 / (1.0 - 0.998001f64)).sqrt() + 1e-8);
        assert!((p[0] - p2).abs() < 1e-14);

        // m3 = -0.099 + 0.05 = -0.049, v3 = 0.004994001 + 0.00025.
        opt.update(&mut p, &[0.5]).unwrap();
        let (m3, v3) = (-0.049, 0.004994001 + 0.00025);
        let p3 = p2 - 0.1 * (m3 / (1.0 - 0.729)) / ((v3 / (1.0 - 0.997002999f64)).sqrt() + 1e-8);
        assert!((p[0] - p3).abs() < 1e-14);
        assert_eq!(opt.step, 3);
    }
}
