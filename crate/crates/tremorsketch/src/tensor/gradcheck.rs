//! Central finite-difference gradient checking.
//!
//! The checker never touches the backward pass: it re-evaluates a forward
//! closure at perturbed inputs, which makes it an independent oracle for the
//! analytic gradients. Run it at `f64`; the `1e-4` relative tolerance used
//! throughout the test suites assumes 64-bit evaluation.

use super::{Scalar, Tensor};

/// Central finite-difference gradients of a scalar-valued function.
///
/// For each element of each input, evaluates `(f(x+h) - f(x-h)) / 2h`.
pub fn finite_difference<F>(f: F, inputs: &[Tensor<f64>], h: f64) -> Vec<Tensor<f64>>
where
    F: Fn(&[Tensor<f64>]) -> f64,
{
    let mut grads = Vec::with_capacity(inputs.len());
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    for i in 0..inputs.len() {
        let mut grad = Tensor::zeros(inputs[i].shape());
        for e in 0..inputs[i].numel() {
            let orig = work[i].data()[e];
            work[i].data_mut()[e] = orig + h;
            let plus = f(&work);
            work[i].data_mut()[e] = orig - h;
            let minus = f(&work);
            work[i].data_mut()[e] = orig;
            grad.data_mut()[e] = (plus - minus) / (2.0 * h);
        }
        grads.push(grad);
    }
    grads
}

/// Largest elementwise relative error between two same-shape tensors,
/// computed as `|a - b| / max(|a|, |b|, 1)` so that near-zero gradients are
/// compared absolutely.
pub fn max_relative_error<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> f64 {
    assert_eq!(a.shape(), b.shape(), "gradient shapes must agree");
    let mut worst = 0.0f64;
    for (&x, &y) in a.data().iter().zip(b.data().iter()) {
        let x = x.to_f64().expect("finite");
        let y = y.to_f64().expect("finite");
        let denom = x.abs().max(y.abs()).max(1.0);
        let err = (x - y).abs() / denom;
        if err > worst {
            worst = err;
        }
    }
    worst
}
