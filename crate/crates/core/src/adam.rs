//! Bias-corrected Adam with a per-epoch multiplicative learning-rate decay.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplied into the learning rate once per epoch.
    pub decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay: 1.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::config("optim.lr must be a positive finite number"));
        }
        for (name, b) in [("optim.beta1", self.beta1), ("optim.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(format!("{name} must lie in [0, 1)")));
            }
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::config("optim.epsilon must be positive"));
        }
        if !(self.decay.is_finite() && self.decay > 0.0) {
            return Err(Error::config("optim.decay must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    /// Current (decayed) learning rate.
    pub learning_rate: f64,
    pub step_count: u64,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            learning_rate: config.learning_rate,
            config,
            step_count: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        })
    }

    pub fn first_moment(&self) -> &[f64] {
        &self.first_moment
    }

    pub fn second_moment(&self) -> &[f64] {
        &self.second_moment
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.first_moment.len() || grads.len() != params.len() {
            return Err(Error::shape(format!(
                "adam state has {} slots; params {} grads {}",
                self.first_moment.len(),
                params.len(),
                grads.len()
            )));
        }
        self.step_count += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let t = self.step_count as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let lr = self.learning_rate;
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
        }
        Ok(())
    }

    pub fn decay_learning_rate(&mut self) {
        self.learning_rate *= self.config.decay;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn state(lr: f64, decay: f64, n: usize) -> AdamState {
        AdamState::new(
            AdamConfig {
                learning_rate: lr,
                decay,
                ..AdamConfig::default()
            },
            n,
        )
        .unwrap()
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut s = state(1e-3, 1.0, 3);
        let mut p = vec![1.0, -2.0, 0.5];
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
        assert_eq!(s.step_count, 1);
    }

    #[test]
    fn first_step_matches_formula() {
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1 -> step = lr / (1 + eps)
        let expected = -1e-3 / (1.0 + 1e-8);
        let mut s = state(1e-3, 1.0, 1);
        let mut p = vec![0.0];
        s.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - expected).abs() < 1e-18, "{}", p[0]);
        assert!((p[0] + 1e-3).abs() < 1e-10);
    }

    #[test]
    fn repeated_steps_descend() {
        let mut s = state(1e-2, 1.0, 1);
        let mut p = vec![0.0];
        s.step(&mut p, &[-2.0]).unwrap();
        let after_one = p[0];
        s.step(&mut p, &[-2.0]).unwrap();
        assert!(after_one > 0.0 && p[0] > after_one);
    }

    #[test]
    fn shape_mismatch() {
        let mut s = state(1e-3, 1.0, 2);
        assert!(s.step(&mut [0.0], &[0.0]).is_err());
        assert!(s.step(&mut [0.0, 0.0], &[0.0]).is_err());
    }

    #[test]
    fn decay_schedule() {
        let mut s = state(1e-3, 1.0, 0);
        s.decay_learning_rate();
        assert_eq!(s.learning_rate, 1e-3);

        let mut s = state(1e-3, 0.95, 0);
        s.decay_learning_rate();
        assert!((s.learning_rate - 9.5e-4).abs() < 1e-18);
        s.decay_learning_rate();
        assert!((s.learning_rate - 9.025e-4).abs() < 1e-18);
    }

    #[test]
    fn invalid_betas_rejected() {
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(cfg, 1).is_err());
    }
}
