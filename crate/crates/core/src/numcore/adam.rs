use serde::{Deserialize, Serialize};

use super::tensor::{Parameter, Tensor};
use crate::error::{CdeError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub epsilon: f64,
}

fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: default_lr(),
            beta1: default_beta1(),
            beta2: default_beta2(),
            epsilon: default_eps(),
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[Parameter]) -> Result<Self> {
        for (name, b) in [("beta1", config.beta1), ("beta2", config.beta2)] {
            if !(b > 0.0 && b < 1.0) {
                return Err(CdeError::invalid(format!("{name} must lie in (0, 1), got {b}")));
            }
        }
        if !(config.learning_rate > 0.0) || !(config.epsilon > 0.0) {
            return Err(CdeError::invalid("learning rate and epsilon must be positive"));
        }
        Ok(Adam {
            config,
            step: 0,
            first: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
            second: params.iter().map(|p| vec![0.0; p.value.len()]).collect(),
        })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one descent step. Nothing is modified if any gradient is
    /// non-finite or mis-shaped.
    pub fn step(&mut self, params: &mut [Parameter], grads: &[Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(CdeError::Shape {
                op: "adam_step",
                detail: format!(
                    "{} parameters, {} gradients, optimizer built for {}",
                    params.len(),
                    grads.len(),
                    self.first.len()
                ),
            });
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(CdeError::Shape {
                    op: "adam_step",
                    detail: format!(
                        "gradient {:?} for parameter `{}` of shape {:?}",
                        g.shape(),
                        p.name,
                        p.value.shape()
                    ),
                });
            }
            if !g.is_finite() {
                return Err(CdeError::NonFiniteGradient {
                    name: p.name.clone(),
                    step: self.step + 1,
                });
            }
        }

        self.step += 1;
        let AdamConfig {
            learning_rate,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.first.iter_mut().zip(self.second.iter_mut()))
        {
            for (((w, &gi), mi), vi) in p
                .value
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = beta1 * *mi + (1.0 - beta1) * gi;
                *vi = beta2 * *vi + (1.0 - beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Vec<Parameter> {
        vec![Parameter::new("w", Tensor::scalar(v), true)]
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut params = scalar_param(1.5);
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        for _ in 0..50 {
            adam.step(&mut params, &[Tensor::scalar(0.0)]).unwrap();
        }
        assert_eq!(params[0].value.item(), 1.5);
        assert_eq!(adam.step_count(), 50);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g, v̂ = g², so the step is lr * g / (|g| + eps).
        let mut params = scalar_param(0.0);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut adam = Adam::new(cfg, &params).unwrap();
        adam.step(&mut params, &[Tensor::scalar(1.0)]).unwrap();
        let expected = -0.1 * 1.0 / (1.0 + 1e-8);
        assert!((params[0].value.item() - expected).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = scalar_param(0.0);
        let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
        let err = adam.step(&mut params, &[Tensor::scalar(f64::NAN)]).unwrap_err();
        match err {
            CdeError::NonFiniteGradient { name, .. } => assert_eq!(name, "w"),
            other => panic!("unexpected {other}"),
        }
        assert_eq!(params[0].value.item(), 0.0);
    }

    #[test]
    fn rejects_bad_betas() {
        let params = scalar_param(0.0);
        let cfg = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(Adam::new(cfg, &params).is_err());
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let run = || {
            let mut params = vec![Parameter::new(
                "w",
                Tensor::matrix(1, 3, vec![0.1, -0.2, 0.3]).unwrap(),
                true,
            )];
            let mut adam = Adam::new(AdamConfig::default(), &params).unwrap();
            for k in 0..100 {
                let g: Vec<f64> = params[0].value.data().iter().map(|w| 2.0 * w + k as f64 * 1e-3).collect();
                adam.step(&mut params, &[Tensor::matrix(1, 3, g).unwrap()]).unwrap();
            }
            params[0].value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }
}
