//! Central-difference gradient checking. Analytic gradients in this crate
//! are hand-derived, so every loss and the network backward pass are frozen
//! against this oracle in tests.

/// Central difference of `f` along coordinate `i` at `point`, step `h`.
/// `point` is perturbed in place and restored before returning.
pub fn central_difference<F>(f: &mut F, point: &mut [f64], i: usize, h: f64) -> f64
where
    F: FnMut(&[f64]) -> f64,
{
    let orig = point[i];
    point[i] = orig + h;
    let plus = f(point);
    point[i] = orig - h;
    let minus = f(point);
    point[i] = orig;
    (plus - minus) / (2.0 * h)
}

/// Relative error between an analytic derivative and its finite-difference
/// estimate, with the denominator floored to keep zero gradients comparable.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (numeric.abs() + 1e-12)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_polynomial_derivative() {
        // f(x) = x0^2 * x1 + 3 x1, df/dx0 = 2 x0 x1, df/dx1 = x0^2 + 3.
        let mut f = |x: &[f64]| x[0] * x[0] * x[1] + 3.0 * x[1];
        let mut x = vec![1.5, -2.0];
        let d0 = central_difference(&mut f, &mut x, 0, 1e-5);
        let d1 = central_difference(&mut f, &mut x, 1, 1e-5);
        assert!(relative_error(2.0 * 1.5 * -2.0, d0) < 1e-9);
        assert!(relative_error(1.5 * 1.5 + 3.0, d1) < 1e-9);
        assert_eq!(x, vec![1.5, -2.0]);
    }
}
