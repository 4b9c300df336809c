//! Central-difference gradient verification.

use super::Scalar;

/// `|a − b| / max(|a|, |b|, 1e-8)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Worst element-wise relative error between `analytic` and central
/// differences of `objective` around `x` with step `h`.
///
/// The objective is evaluated in f64; inputs of any [`Scalar`] type are
/// widened before perturbation.
pub fn finite_difference_check<T: Scalar, G: Scalar>(
    mut objective: impl FnMut(&[T]) -> f64,
    x: &[T],
    analytic: &[G],
    h: f64,
) -> f64 {
    assert_eq!(x.len(), analytic.len(), "one analytic entry per input");
    let mut probe: Vec<T> = x.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let base = x[i].as_f64();
        let (hi, lo) = (T::from_f64(base + h), T::from_f64(base - h));
        probe[i] = hi;
        let plus = objective(&probe);
        probe[i] = lo;
        let minus = objective(&probe);
        probe[i] = x[i];
        // Divide by the step actually representable in T.
        let numeric = (plus - minus) / (hi.as_f64() - lo.as_f64());
        worst = worst.max(relative_error(numeric, analytic[i].as_f64()));
    }
    worst
}
