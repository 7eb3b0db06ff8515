//! Finite-difference helpers shared by unit and integration tests.

use rand::Rng;

use super::Matrix;

pub fn random_matrix(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

/// Central differences of the scalar function `f` with respect to every
/// entry of `at`.
pub fn finite_difference(at: &Matrix, step: f64, mut f: impl FnMut(&Matrix) -> f64) -> Matrix {
    let mut out = Matrix::zeros(at.rows(), at.cols());
    let mut probe = at.clone();
    for k in 0..at.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + step;
        let plus = f(&probe);
        probe.as_mut_slice()[k] = orig - step;
        let minus = f(&probe);
        probe.as_mut_slice()[k] = orig;
        out.as_mut_slice()[k] = (plus - minus) / (2.0 * step);
    }
    out
}

/// Elementwise `|a − n| / max(|a|, |n|, floor)`, maximized over entries.
pub fn relative_error(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    assert_eq!(analytic.shape(), numeric.shape());
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// [`relative_error`] with a `1e-6` floor, for well-scaled unit checks.
pub fn max_relative_error(analytic: &Matrix, numeric: &Matrix) -> f64 {
    relative_error(analytic, numeric, 1e-6)
}
