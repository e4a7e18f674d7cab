//! Central finite differences, used to validate analytic gradients.
//!
//! Only ever evaluates the function being differentiated; it shares nothing
//! with the backward pass it is checking.

use crate::tensor::Tensor;

/// Step used by the checks in this crate.
pub const DEFAULT_STEP: f64 = 1e-4;

/// `(f(x + h e_i) - f(x - h e_i)) / 2h` for every element of every input.
pub fn numerical_gradients<F>(inputs: &mut [Tensor<f64>], h: f64, mut f: F) -> Vec<Vec<f64>>
where
    F: FnMut(&[Tensor<f64>]) -> f64,
{
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[t].numel()];
        for (i, g) in grad.iter_mut().enumerate() {
            let orig = inputs[t].data()[i];
            inputs[t].data_mut()[i] = orig + h;
            let plus = f(inputs);
            inputs[t].data_mut()[i] = orig - h;
            let minus = f(inputs);
            inputs[t].data_mut()[i] = orig;
            *g = (plus - minus) / (2.0 * h);
        }
        out.push(grad);
    }
    out
}

/// `|a - b| / max(|a|, |b|, 1e-8)`, maximized over elements.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic.iter().zip(numeric).map(|(&a, &b)| (a - b).abs() / a.abs().max(b.abs()).max(1e-8)).fold(0.0, f64::max)
}
