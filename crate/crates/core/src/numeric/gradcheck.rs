//! Central finite differences, the verification oracle for every analytic
//! gradient in the crate.

use super::tensor::Tensor;
use super::NumericError;

pub const DEFAULT_EPSILON: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`: `(f(x+e) - f(x-e)) / 2e` per
/// coordinate.
pub fn central_difference(f: impl Fn(&Tensor) -> f64, x: &Tensor, epsilon: f64) -> Result<Tensor, NumericError> {
    let coords: Vec<usize> = (0..x.len()).collect();
    let values = central_difference_at(f, x, &coords, epsilon)?;
    Tensor::from_vec(x.rows(), x.cols(), values)
}

/// Central differences restricted to the flat indices in `coords`.
pub fn central_difference_at(
    f: impl Fn(&Tensor) -> f64,
    x: &Tensor,
    coords: &[usize],
    epsilon: f64,
) -> Result<Vec<f64>, NumericError> {
    if !(epsilon > 0.0) {
        return Err(NumericError::Invalid(format!("finite-difference step {epsilon}")));
    }
    let mut probe = x.clone();
    let mut out = Vec::with_capacity(coords.len());
    for &i in coords {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + epsilon;
        let plus = f(&probe);
        probe.data_mut()[i] = orig - epsilon;
        let minus = f(&probe);
        probe.data_mut()[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericError::NonFinite(format!("objective at coordinate {i}: f(x+e)={plus}, f(x-e)={minus}")));
        }
        out.push((plus - minus) / (2.0 * epsilon));
    }
    Ok(out)
}

/// `|a - b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub fn max_relative_error(analytic: &Tensor, numeric: &Tensor) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape(), "gradient shapes differ");
    analytic.data().iter().zip(numeric.data()).map(|(&a, &b)| relative_error(a, b)).fold(0.0, f64::max)
}
