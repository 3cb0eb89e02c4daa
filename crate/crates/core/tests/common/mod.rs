//! Brute-force references shared by the integration targets.
#![allow(dead_code)]

use nesterov_sa::problems::ProblemInstance;

/// Minimizer of a strictly convex `f` on `[lo, hi]`.
pub fn ternary_search(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let m1 = lo + (hi - lo) / 3.0;
        let m2 = hi - (hi - lo) / 3.0;
        if f(m1) < f(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    0.5 * (lo + hi)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The sample prox moves `x` along the sampled row, so it reduces to a scalar
/// search over the step length.
pub fn prox_by_search(inst: &ProblemInstance, x: &[f64], i: usize, alpha: f64) -> Vec<f64> {
    let a = inst.row(i);
    let q = dot(a, a);
    let at = |s: f64| -> Vec<f64> { x.iter().zip(a).map(|(xj, aj)| xj - s * aj).collect() };
    let phi = |s: f64| inst.sample_value(&at(s), i) + s * s * q / (2.0 * alpha);
    let bound = 10.0 * (1.0 + inst.residual(x, i).abs()) * (1.0 + alpha) / q.max(1e-12);
    at(ternary_search(phi, -bound, bound))
}
