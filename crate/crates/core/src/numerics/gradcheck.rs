use crate::error::{Error, Result};

/// Largest relative discrepancy between an analytic gradient and central
/// differences: `max_i |analytic_i - numeric_i| / max(1, |analytic_i|)`.
///
/// `function` returns the value and its analytic gradient at a point.
pub fn check_gradient<Fun>(function: Fun, point: &[f64], epsilon: f64) -> Result<f64>
where
    Fun: Fn(&[f64]) -> (f64, Vec<f64>),
{
    let (value, analytic) = function(point);
    if !value.is_finite() {
        return Err(Error::NonFinite("function value at the base point".into()));
    }
    if analytic.len() != point.len() {
        return Err(Error::usage(format!(
            "gradient has {} entries for a {}-dimensional point",
            analytic.len(),
            point.len()
        )));
    }
    let mut probe = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..point.len() {
        probe[i] = point[i] + epsilon;
        let plus = function(&probe).0;
        probe[i] = point[i] - epsilon;
        let minus = function(&probe).0;
        probe[i] = point[i];
        if !plus.is_finite() || !minus.is_finite() {
            return Err(Error::NonFinite(format!(
                "function value at coordinate {i} perturbed by ±{epsilon}"
            )));
        }
        let numeric = (plus - minus) / (2.0 * epsilon);
        let err = (analytic[i] - numeric).abs() / analytic[i].abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let f = |x: &[f64]| (x[0] * x[0], vec![2.0 * x[0]]);
        assert_eq!(f(&[3.0]).1, vec![6.0]);
        assert!(check_gradient(f, &[3.0], 1e-5).unwrap() <= 1e-9);
    }

    #[test]
    fn constant_function() {
        let f = |_: &[f64]| (4.2, vec![0.0, 0.0]);
        assert!(check_gradient(f, &[1.0, -2.0], 1e-5).unwrap() <= 1e-10);
    }

    #[test]
    fn non_finite_names_coordinate() {
        let f = |x: &[f64]| {
            let v = if x[1] > 1.0 { f64::NAN } else { x[0] + x[1] };
            (v, vec![1.0, 1.0])
        };
        let err = check_gradient(f, &[0.0, 1.0], 1e-3).unwrap_err();
        assert!(err.to_string().contains("coordinate 1"), "{err}");
    }
}
