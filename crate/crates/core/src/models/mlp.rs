use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::error::{CdeError, Result};
use crate::numcore::{Parameter, Tape, Tensor, Var};

/// Fully connected trunk with tanh hidden units and a linear output layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
}

impl Mlp {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Result<Self> {
        let sizes: Vec<usize> = std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect();
        if sizes.contains(&0) {
            return Err(CdeError::invalid(format!("layer sizes must be positive: {sizes:?}")));
        }
        Ok(Mlp { sizes })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().expect("at least input and output")
    }

    /// Number of parameter tensors (weight and bias per layer).
    pub fn n_tensors(&self) -> usize {
        2 * self.n_layers()
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init_params(&self, rng: &mut dyn RngCore) -> Vec<Parameter> {
        let mut params = Vec::with_capacity(self.n_tensors());
        for (l, w) in self.sizes.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..limit))
                .collect();
            params.push(Parameter::new(
                format!("layer{l}.weight"),
                Tensor::matrix(fan_in, fan_out, data).expect("sized"),
                true,
            ));
            params.push(Parameter::new(
                format!("layer{l}.bias"),
                Tensor::zeros(1, fan_out),
                false,
            ));
        }
        params
    }

    pub fn forward(&self, tape: &mut Tape, params: &[Var], x: Var) -> Result<Var> {
        if params.len() < self.n_tensors() {
            return Err(CdeError::Shape {
                op: "mlp",
                detail: format!("{} parameter tensors for {} layers", params.len(), self.n_layers()),
            });
        }
        let mut h = x;
        for l in 0..self.n_layers() {
            let z = tape.matmul(h, params[2 * l])?;
            let z = tape.add_row(z, params[2 * l + 1])?;
            h = if l + 1 < self.n_layers() { tape.tanh(z) } else { z };
        }
        Ok(h)
    }
}
