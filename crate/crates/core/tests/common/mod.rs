#![allow(dead_code)]

use cde_core::models::{CondDensityModel, NeuralModel};

/// Composite trapezoid rule with `n` nodes on `[lo, hi]`.
pub fn trapezoid(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / (n - 1) as f64;
    let mut s = 0.5 * (f(lo) + f(hi));
    for i in 1..n - 1 {
        s += f(lo + i as f64 * h);
    }
    s * h
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Worst relative error between analytic parameter gradients of
/// `cond_log_pdf(x, y)` and central differences with step `step`.
pub fn param_gradient_error(model: &NeuralModel, x: &[f64], y: &[f64], step: f64, floor: f64) -> f64 {
    let analytic = model.log_pdf_gradients(x, y).unwrap().params;
    let mut probe = model.clone();
    let mut worst = 0.0_f64;
    for (pi, g) in analytic.iter().enumerate() {
        for j in 0..g.len() {
            let orig = probe.parameters()[pi].value.data()[j];
            probe.parameters_mut()[pi].value.data_mut()[j] = orig + step;
            let up = probe.cond_log_pdf(x, y).unwrap();
            probe.parameters_mut()[pi].value.data_mut()[j] = orig - step;
            let down = probe.cond_log_pdf(x, y).unwrap();
            probe.parameters_mut()[pi].value.data_mut()[j] = orig;
            let fd = (up - down) / (2.0 * step);
            worst = worst.max(rel_err(g.data()[j], fd, floor));
        }
    }
    worst
}

/// Sets the trunk's output layer to zero weights and the given bias, so the
/// network emits `bias` for every input.
pub fn force_output(model: &mut NeuralModel, bias: &[f64]) {
    let last = model.mlp().n_tensors() - 1;
    let params = model.parameters_mut();
    params[last - 1].value.data_mut().iter_mut().for_each(|w| *w = 0.0);
    assert_eq!(params[last].value.len(), bias.len());
    params[last].value.data_mut().copy_from_slice(bias);
}
