//! Companion-matrix algebra behind the momentum recursion.
//!
//! The second-order recursion `r_{k+1} = (1 + theta_k) r_k - theta_k r_{k-1}`
//! is driven by the companion matrices `M_k = [[0, -theta_k], [1, 1 + theta_k]]`
//! of `(x - 1)(x - theta_k)`. Head products `P_n = M_1 M_2 ... M_n` accumulate
//! new factors on the right; tail products `Q_n = M_n Q_{n+1}` are rank one,
//! `[[-t_n, -t_n], [1 + t_n, 1 + t_n]]`, with `t_n = (1 + t_{n+1}) theta_n`.

use thiserror::Error;

use crate::schedules::MomentumSchedule;

pub type Mat2 = [[f64; 2]; 2];

/// Tolerance on the column-sum invariant of head products.
pub const STRUCTURE_TOL: f64 = 1e-9;

/// Default truncation error for tail coefficients.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AlgebraError {
    #[error("momentum {0} outside [0, 1)")]
    Domain(f64),
    #[error("need at least {needed} momentum values, got {got}")]
    Argument { needed: usize, got: usize },
    #[error("product index must be >= 1")]
    ZeroIndex,
    #[error("momentum supremum {0} >= 1: tail series diverges")]
    Divergence(f64),
    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),
    #[error("matrix is not a head product: column sums {0:?} differ from [1, 1]")]
    Structure([f64; 2]),
}

pub fn mat_mul(a: &Mat2, b: &Mat2) -> Mat2 {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

pub fn frobenius_distance(a: &Mat2, b: &Mat2) -> f64 {
    let mut acc = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            acc += (a[i][j] - b[i][j]).powi(2);
        }
    }
    acc.sqrt()
}

fn check_theta(theta: f64) -> Result<(), AlgebraError> {
    if (0.0..1.0).contains(&theta) {
        Ok(())
    } else {
        Err(AlgebraError::Domain(theta))
    }
}

/// Companion matrix of `(x - 1)(x - theta)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumMatrix(Mat2);

impl MomentumMatrix {
    pub fn entries(&self) -> &Mat2 {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1]
    }

    pub fn determinant(&self) -> f64 {
        self.0[0][0] * self.0[1][1] - self.0[0][1] * self.0[1][0]
    }

    /// Real eigenvalues in descending order, or `None` for a complex pair.
    pub fn eigenvalues(&self) -> Option<[f64; 2]> {
        let half_trace = self.trace() / 2.0;
        let disc = half_trace * half_trace - self.determinant();
        if disc < 0.0 {
            return None;
        }
        let root = disc.sqrt();
        Some([half_trace + root, half_trace - root])
    }
}

pub fn companion_matrix(theta: f64) -> Result<MomentumMatrix, AlgebraError> {
    check_theta(theta)?;
    Ok(MomentumMatrix([[0.0, -theta], [1.0, 1.0 + theta]]))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ProductKind {
    /// `P_n = M_1 ... M_n`
    Head,
    /// `Q_n = M_n M_{n+1} ...`, built from tail coefficients.
    Tail,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProductState {
    pub entries: Mat2,
    pub index: usize,
    pub kind: ProductKind,
}

impl ProductState {
    pub fn column_sums(&self) -> [f64; 2] {
        [
            self.entries[0][0] + self.entries[1][0],
            self.entries[0][1] + self.entries[1][1],
        ]
    }

    pub fn max_abs_entry(&self) -> f64 {
        self.entries.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()))
    }
}

/// Iterator over `P_1, P_2, ...` for a momentum sequence.
pub struct HeadProducts<'a> {
    thetas: &'a [f64],
    current: Mat2,
    next_index: usize,
}

impl<'a> HeadProducts<'a> {
    pub fn new(thetas: &'a [f64]) -> Result<Self, AlgebraError> {
        for &theta in thetas {
            check_theta(theta)?;
        }
        Ok(Self {
            thetas,
            current: [[1.0, 0.0], [0.0, 1.0]],
            next_index: 1,
        })
    }
}

impl Iterator for HeadProducts<'_> {
    type Item = ProductState;

    fn next(&mut self) -> Option<ProductState> {
        let theta = *self.thetas.get(self.next_index - 1)?;
        let factor = [[0.0, -theta], [1.0, 1.0 + theta]];
        self.current = mat_mul(&self.current, &factor);
        let state = ProductState {
            entries: self.current,
            index: self.next_index,
            kind: ProductKind::Head,
        };
        self.next_index += 1;
        Some(state)
    }
}

/// `P_n = M_1 M_2 ... M_n` with `thetas[k - 1] = theta_k`.
pub fn head_product(thetas: &[f64], n: usize) -> Result<ProductState, AlgebraError> {
    if n == 0 {
        return Err(AlgebraError::ZeroIndex);
    }
    if thetas.len() < n {
        return Err(AlgebraError::Argument { needed: n, got: thetas.len() });
    }
    let last = HeadProducts::new(&thetas[..n])?.last();
    Ok(last.expect("n >= 1 factors"))
}

/// `t_n` for `n = 1..=len`, truncated with a certified error bound.
#[derive(Clone, Debug, PartialEq)]
pub struct TailCoefficients {
    values: Vec<f64>,
    thetas: Vec<f64>,
    /// Index at which the backward recursion was started.
    pub horizon: usize,
    /// Upper bound on `|t_n - stored t_n|` for every stored index.
    pub tolerance: f64,
}

impl TailCoefficients {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `t_n`, 1-based.
    pub fn get(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.values.get(i).copied())
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `theta_n` used for `t_n`, 1-based.
    pub fn theta(&self, n: usize) -> Option<f64> {
        n.checked_sub(1).and_then(|i| self.thetas.get(i).copied())
    }

    /// `Q_n = [[-t_n, -t_n], [1 + t_n, 1 + t_n]]`.
    pub fn tail_product(&self, n: usize) -> Option<ProductState> {
        let t = self.get(n)?;
        Some(ProductState {
            entries: fixed_point(t),
            index: n,
            kind: ProductKind::Tail,
        })
    }

    /// Largest `|t_n - (1 + t_{n+1}) theta_n|` over consecutive stored pairs.
    pub fn max_recursion_residual(&self) -> f64 {
        self.values
            .windows(2)
            .zip(&self.thetas)
            .map(|(w, theta)| (w[0] - (1.0 + w[1]) * theta).abs())
            .fold(0.0, f64::max)
    }
}

/// `t_n = sum_{k >= n} prod_{j=n}^{k} theta_j` for `n = 1..=n_max`.
///
/// Constant schedules use the closed form `theta / (1 - theta)`. Otherwise the
/// recursion `t_n = (1 + t_{n+1}) theta_n` runs backwards from `t_{K+1} = 0`,
/// where `K` is chosen so that the start-up error, at most
/// `d / (1 - d) * d^(K + 1 - n_max)` with `d = sup theta`, is below `tol`.
pub fn tail_coefficients(
    schedule: &MomentumSchedule,
    n_max: usize,
    tol: f64,
) -> Result<TailCoefficients, AlgebraError> {
    if !(tol > 0.0) {
        return Err(AlgebraError::Tolerance(tol));
    }
    let d = schedule.bounds().hi;
    if !(d < 1.0) {
        return Err(AlgebraError::Divergence(d));
    }
    let thetas: Vec<f64> = (1..=n_max).map(|k| schedule.eval(k)).collect();

    if let Some(theta) = schedule.constant_value() {
        let t = theta / (1.0 - theta);
        return Ok(TailCoefficients {
            values: vec![t; n_max],
            thetas,
            horizon: n_max,
            tolerance: tol,
        });
    }

    let extra = if d <= 0.0 {
        0
    } else {
        let needed = (tol * (1.0 - d) / d).ln() / d.ln();
        needed.max(0.0).ceil() as usize + 1
    };
    let horizon = n_max + extra;
    let mut t_next = 0.0;
    for k in (n_max + 1..=horizon).rev() {
        t_next = (1.0 + t_next) * schedule.eval(k);
    }
    let mut values = vec![0.0; n_max];
    for n in (1..=n_max).rev() {
        t_next = (1.0 + t_next) * thetas[n - 1];
        values[n - 1] = t_next;
    }
    Ok(TailCoefficients { values, thetas, horizon, tolerance: tol })
}

/// `X(t) = [[-t, -t], [1 + t, 1 + t]]`, a fixed point of `X -> X M_k` for every `k`.
pub fn fixed_point(t: f64) -> Mat2 {
    [[-t, -t], [1.0 + t, 1.0 + t]]
}

/// Frobenius norm of `X(t) M(theta) - X(t)`.
pub fn fixed_point_defect(t: f64, theta: f64) -> Result<f64, AlgebraError> {
    let m = companion_matrix(theta)?;
    let x = fixed_point(t);
    Ok(frobenius_distance(&mat_mul(&x, m.entries()), &x))
}

/// Squared distance from a head product `[[-d, -c], [1 + d, 1 + c]]` to the
/// fixed-point set, `(d - c)^2`.
///
/// `theta` is the momentum of the next factor; it only has to be a valid
/// momentum value.
pub fn fixed_point_residual(p: &ProductState, theta: f64) -> Result<f64, AlgebraError> {
    check_theta(theta)?;
    let sums = p.column_sums();
    if sums.iter().any(|s| (s - 1.0).abs() > STRUCTURE_TOL) {
        return Err(AlgebraError::Structure(sums));
    }
    let d = -p.entries[0][0];
    let c = -p.entries[0][1];
    Ok((d - c).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn companion_examples() {
        let m = companion_matrix(0.5).unwrap();
        assert_eq!(m.entries(), &[[0.0, -0.5], [1.0, 1.5]]);
        let m = companion_matrix(0.0).unwrap();
        assert_eq!(m.entries(), &[[0.0, 0.0], [1.0, 1.0]]);
        let m = companion_matrix(0.9).unwrap();
        assert!((m.trace() - 1.9).abs() < 1e-15);
        assert!((m.determinant() - 0.9).abs() < 1e-15);
        let ev = m.eigenvalues().unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-12 && (ev[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn companion_domain() {
        assert_eq!(companion_matrix(1.0), Err(AlgebraError::Domain(1.0)));
        assert!(companion_matrix(-0.01).is_err());
    }

    #[test]
    fn head_product_errors() {
        assert_eq!(head_product(&[0.5], 0), Err(AlgebraError::ZeroIndex));
        assert_eq!(
            head_product(&[0.5, 0.5], 3),
            Err(AlgebraError::Argument { needed: 3, got: 2 })
        );
        assert!(head_product(&[0.5, 1.2], 2).is_err());
    }

    #[test]
    fn zero_momentum_product() {
        let p = head_product(&[0.0; 7], 7).unwrap();
        assert_eq!(p.entries, [[0.0, 0.0], [1.0, 1.0]]);
    }

    #[test]
    fn half_momentum_product_n3() {
        let p = head_product(&[0.5; 3], 3).unwrap();
        // oracle: explicit multiplication of the three factors
        let m = [[0.0, -0.5], [1.0, 1.5]];
        let direct = mat_mul(&mat_mul(&m, &m), &m);
        for (row, drow) in p.entries.iter().zip(&direct) {
            for (x, d) in row.iter().zip(drow) {
                assert!((x - d).abs() < 1e-12);
            }
        }
        assert!((p.entries[0][0] + 0.75).abs() < 1e-12);
        assert!((p.entries[0][1] + 0.875).abs() < 1e-12);
    }

    #[test]
    fn closed_form_entries() {
        let thetas: Vec<f64> = (1..=30).map(|k| 0.2 + 0.6 / k as f64).collect();
        for p in HeadProducts::new(&thetas).unwrap() {
            let n = p.index;
            let mut prod = 1.0;
            let mut partial = Vec::new();
            for theta in &thetas[..n] {
                prod *= theta;
                partial.push(prod);
            }
            let top_left: f64 = -partial[..n - 1].iter().sum::<f64>();
            let top_right: f64 = -partial.iter().sum::<f64>();
            assert!((p.entries[0][0] - top_left).abs() < 1e-12);
            assert!((p.entries[0][1] - top_right).abs() < 1e-12);
        }
    }

    #[test]
    fn harmonic_cauchy_step() {
        let thetas: Vec<f64> = (1..=11).map(|k| 1.0 / (k as f64 + 3.0)).collect();
        let p10 = head_product(&thetas, 10).unwrap();
        let p11 = head_product(&thetas, 11).unwrap();
        let bound = 2.0 * thetas[..10].iter().product::<f64>();
        assert!(frobenius_distance(&p11.entries, &p10.entries) <= bound);
    }

    #[test]
    fn tail_examples() {
        let t = tail_coefficients(&MomentumSchedule::constant(0.5).unwrap(), 10, 1e-12).unwrap();
        assert!(t.values().iter().all(|&v| v == 1.0));
        let t = tail_coefficients(&MomentumSchedule::constant(0.0).unwrap(), 10, 1e-12).unwrap();
        assert!(t.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tail_harmonic_matches_factorial_series() {
        // oracle: t_1 = sum_{k>=1} prod_{j=1}^k 1/(j+3) = sum_{k>=1} 6/(k+3)!
        let mut oracle = 0.0;
        let mut fact = 6.0; // 3!
        for k in 1..40 {
            fact *= (k + 3) as f64;
            oracle += 6.0 / fact;
        }
        assert!((oracle - 6.0 * (std::f64::consts::E - 8.0 / 3.0)).abs() < 1e-14);
        let t = tail_coefficients(&MomentumSchedule::harmonic_offset(3.0).unwrap(), 5, 1e-12).unwrap();
        assert!((t.get(1).unwrap() - oracle).abs() < 1e-12);
        assert!((t.get(1).unwrap() - 0.309691).abs() < 1e-6);
    }

    #[test]
    fn tail_tolerance_must_be_positive() {
        let s = MomentumSchedule::constant(0.5).unwrap();
        assert_eq!(tail_coefficients(&s, 3, 0.0), Err(AlgebraError::Tolerance(0.0)));
    }

    #[test]
    fn tail_rejects_divergent_schedule() {
        // bypass the checked constructor to reach the guard
        let s = MomentumSchedule::Constant { theta: 1.0 };
        assert_eq!(tail_coefficients(&s, 3, 1e-12), Err(AlgebraError::Divergence(1.0)));
    }

    #[test]
    fn residual_examples() {
        let p = ProductState {
            entries: [[-0.3, -0.1], [1.3, 1.1]],
            index: 1,
            kind: ProductKind::Head,
        };
        assert!((fixed_point_residual(&p, 0.5).unwrap() - 0.04).abs() < 1e-15);
        let p = ProductState { entries: fixed_point(0.7), index: 3, kind: ProductKind::Head };
        assert_eq!(fixed_point_residual(&p, 0.5).unwrap(), 0.0);
        let bad = ProductState { entries: [[0.0, 0.0], [0.0, 1.0]], index: 1, kind: ProductKind::Head };
        assert!(matches!(fixed_point_residual(&bad, 0.5), Err(AlgebraError::Structure(_))));
    }

    #[test]
    fn residual_decays_with_momentum_products() {
        let thetas = [0.5; 20];
        let p = head_product(&thetas, 20).unwrap();
        // oracle: project onto S directly, the nearest X(t) has t = (d + c) / 2
        let d = -p.entries[0][0];
        let c = -p.entries[0][1];
        let projection = fixed_point((d + c) / 2.0);
        let dist_sq = frobenius_distance(&p.entries, &projection).powi(2);
        let residual = fixed_point_residual(&p, 0.5).unwrap();
        assert!((dist_sq - residual).abs() < 1e-15);
        assert!(residual <= thetas.iter().map(|t| t * t).product::<f64>() * (1.0 + 1e-12));
    }
}
