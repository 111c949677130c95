//! Finite-difference oracles for the test suites.
//!
//! Deliberately independent of the tape: everything here evaluates plain
//! closures, so a tape bug cannot hide from the comparison.

use crate::par;

/// Central differences of a scalar function at `x`, one coordinate at a time.
pub fn central_differences<F>(f: &F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    par::map_indexed(x.len(), |i| {
        let mut xp = x.to_vec();
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        (fp - fm) / (2.0 * h)
    })
}

/// Largest entrywise relative error between two gradients, with a small
/// absolute floor so exact zeros compare cleanly.
pub fn max_relative_error(a: &[f64], b: &[f64]) -> f64 {
    max_relative_error_with_floor(a, b, 1e-6)
}

/// As [`max_relative_error`] with an explicit floor. Central differences
/// carry roundoff noise of roughly eps·|f|/h, so checks on gradients whose
/// entries legitimately cancel toward zero need a floor above that noise.
pub fn max_relative_error_with_floor(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            let denom = x.abs().max(y.abs()).max(floor);
            (x - y).abs() / denom
        })
        .fold(0.0, f64::max)
}

/// Relative l2 error between two gradient vectors.
pub fn vector_relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    let norm: f64 = b.iter().map(|y| y * y).sum();
    (diff / norm.max(1e-24)).sqrt()
}
