//! Finite-difference utilities for validating gradients.
//!
//! Reverse-mode gradients in this crate are accepted against central
//! differences: perturb one coordinate at a time by `±h`, compare
//! `(f(x+h) - f(x-h)) / 2h` with the analytic gradient, and bound the
//! relative disagreement.

/// Central-difference step used throughout the test suites.
pub const DEFAULT_STEP: f64 = 1e-5;

/// Relative-error bound the analytic gradients are held to.
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

/// Numerical gradient of `f` at `x` by central differences with step `h`.
///
/// `f` is called twice per coordinate on a scratch copy of `x`.
pub fn central_diff(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut scratch = x.to_vec();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let original = scratch[i];
        scratch[i] = original + h;
        let plus = f(&scratch);
        scratch[i] = original - h;
        let minus = f(&scratch);
        scratch[i] = original;
        grad.push((plus - minus) / (2.0 * h));
    }
    grad
}

/// Relative error between two values: `|a-b| / max(|a|, |b|, floor)`.
///
/// The floor keeps exact zero-against-zero comparisons at 0 instead of 0/0.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Largest element-wise [`rel_err`] between two gradients.
///
/// # Panics
/// Panics if the slices differ in length.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}
