//! Central finite differences for checking analytic gradients.

use nalgebra::DVector;

/// Default step; balances truncation (O(h²)) against cancellation.
pub const FD_STEP: f64 = 1e-5;

/// Central-difference gradient of `f` at `x`.
pub fn numeric_gradient(mut f: impl FnMut(&DVector<f64>) -> f64, x: &DVector<f64>, h: f64) -> DVector<f64> {
    let mut probe = x.clone();
    DVector::from_fn(x.len(), |i, _| {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = f(&probe);
        probe[i] = orig - h;
        let down = f(&probe);
        probe[i] = orig;
        (up - down) / (2.0 * h)
    })
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, or 0 when both vanish.
pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let scale = a.norm().max(b.norm());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).norm() / scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_gradient() {
        let x = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let g = numeric_gradient(|v| v.dot(v) + 3.0 * v[0], &x, FD_STEP);
        let want = &x * 2.0 + DVector::from_vec(vec![3.0, 0.0, 0.0]);
        assert!(relative_error(&g, &want) < 1e-9);
    }

    #[test]
    fn relative_error_of_zeros() {
        let z = DVector::zeros(3);
        assert_eq!(relative_error(&z, &z), 0.0);
    }
}
