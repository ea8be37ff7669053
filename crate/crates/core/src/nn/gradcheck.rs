//! Central finite differences, the reference every analytic backward pass is
//! checked against. Only meaningful for `f64` tensors.

use super::tensor::Tensor;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared absolutely rather than relatively.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_FLOOR)`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Numerical gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_gradient(x: &Tensor<f64>, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Tensor<f64> {
    let mut probe = x.clone();
    let mut grad = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = f(&probe);
        probe.data_mut()[i] = orig - FD_STEP;
        let down = f(&probe);
        probe.data_mut()[i] = orig;
        grad.data_mut()[i] = (up - down) / (2.0 * FD_STEP);
    }
    grad
}

/// Largest relative error between `analytic` and the numerical gradient of `f` at `x`.
pub fn check_gradient(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl FnMut(&Tensor<f64>) -> f64) -> f64 {
    assert_eq!(x.shape(), analytic.shape(), "gradient shape");
    let numeric = numeric_gradient(x, f);
    max_rel_err(analytic, &numeric)
}

pub fn max_rel_err(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| rel_err(x, y))
        .fold(0.0, f64::max)
}
