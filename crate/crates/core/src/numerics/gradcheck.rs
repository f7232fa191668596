use super::NumericsError;

/// Central-difference gradient of `f` at `point`.
///
/// Each coordinate is perturbed by `±h`; the quotient uses the step that was
/// actually representable in `f32`, so rounding of `x ± h` does not bias the
/// estimate.
pub fn finite_difference_gradient<F>(mut f: F, point: &[f32], h: f32) -> Result<Vec<f64>, NumericsError>
where
    F: FnMut(&[f32]) -> Result<f64, NumericsError>,
{
    if h <= 0.0 || !h.is_finite() {
        return Err(NumericsError::InvalidArgument(format!("step must be positive, got {}", h)));
    }
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        let original = x[i];
        let plus = original + h;
        let minus = original - h;
        x[i] = plus;
        let f_plus = f(&x)?;
        x[i] = minus;
        let f_minus = f(&x)?;
        x[i] = original;
        if !f_plus.is_finite() || !f_minus.is_finite() {
            return Err(NumericsError::NonFinite {
                op: "finite_difference_gradient",
                index: i,
            });
        }
        grad.push((f_plus - f_minus) / (plus as f64 - minus as f64));
    }
    Ok(grad)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`; zero when both vectors are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
