use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum OptimizerConfig {
    Plain,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// Gradient-ascent optimizer. One instance lives for a whole run, shared by
/// outer and inner updates.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    step_size: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, step_size: f64, dim: usize) -> Self {
        Optimizer {
            config,
            step_size,
            m: vec![0.0; dim],
            v: vec![0.0; dim],
            t: 0,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.t
    }

    /// Returns the parameter delta for an ascent step along `gradient`.
    pub fn update(&mut self, gradient: &[f64]) -> Result<Vec<f64>> {
        if gradient.len() != self.m.len() {
            return Err(Error::DimensionMismatch {
                expected: self.m.len(),
                got: gradient.len(),
            });
        }
        if !linalg::all_finite(gradient) {
            return Err(Error::NonFinite("optimizer gradient"));
        }
        self.t += 1;
        match self.config {
            OptimizerConfig::Plain => Ok(gradient.iter().map(|g| self.step_size * g).collect()),
            OptimizerConfig::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                let bc1 = 1.0 - beta1.powi(self.t);
                let bc2 = 1.0 - beta2.powi(self.t);
                let mut delta = Vec::with_capacity(gradient.len());
                for ((m, v), g) in self.m.iter_mut().zip(self.v.iter_mut()).zip(gradient) {
                    *m = beta1 * *m + (1.0 - beta1) * g;
                    *v = beta2 * *v + (1.0 - beta2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    delta.push(self.step_size * m_hat / (v_hat.sqrt() + epsilon));
                }
                Ok(delta)
            }
        }
    }

    pub fn apply(&mut self, theta: &mut [f64], gradient: &[f64]) -> Result<()> {
        let delta = self.update(gradient)?;
        linalg::axpy(1.0, &delta, theta);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_step() {
        let mut opt = Optimizer::new(OptimizerConfig::Plain, 1e-3, 2);
        assert_eq!(opt.update(&[1.0, 0.0]).unwrap(), vec![0.001, 0.0]);
        assert_eq!(opt.update(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn adam_first_step_by_hand() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 0.01, 3);
        let g = [2.0, -0.5, 0.0];
        let delta = opt.update(&g).unwrap();
        // m̂ = g, v̂ = g², so delta = η g / (|g| + ε)
        for (d, gi) in delta.iter().zip(g) {
            let expected = 0.01 * gi / (gi.abs() + 1e-8);
            assert!((d - expected).abs() < 1e-15, "{d} vs {expected}");
        }
        // Second step with the same gradient keeps the same direction.
        let second = opt.update(&g).unwrap();
        assert!((second[0] - 0.01 * 2.0 / (2.0 + 1e-8)).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_from_start() {
        let mut opt = Optimizer::new(OptimizerConfig::default(), 0.01, 2);
        assert_eq!(opt.update(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn rejects_non_finite() {
        let mut opt = Optimizer::new(OptimizerConfig::Plain, 0.1, 1);
        assert!(opt.update(&[f64::NAN]).is_err());
    }
}
