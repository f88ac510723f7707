use super::Matrix;
use crate::error::{Result, UbpError};

/// Central-difference gradient of `f` at `x`, one entry at a time.
pub fn finite_diff_grad<F>(mut f: F, x: &Matrix<f64>, h: f64) -> Result<Matrix<f64>>
where
    F: FnMut(&Matrix<f64>) -> f64,
{
    if !(h > 0.0) {
        return Err(UbpError::Contract(format!("step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Matrix::zeros(x.rows(), x.cols());
    for idx in 0..x.as_slice().len() {
        let orig = probe.as_slice()[idx];
        probe.as_mut_slice()[idx] = orig + h;
        let plus = f(&probe);
        probe.as_mut_slice()[idx] = orig - h;
        let minus = f(&probe);
        probe.as_mut_slice()[idx] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(UbpError::Oracle(format!(
                "function not finite around entry {idx} (f+ = {plus}, f- = {minus})"
            )));
        }
        grad.as_mut_slice()[idx] = (plus - minus) / (2.0 * h);
    }
    Ok(grad)
}

/// Largest entrywise relative error `|a - b| / max(|a|, |b|, floor)`.
///
/// `floor` keeps entries whose true gradient is ~0 from dominating.
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
