//! Synthetic regression instances and their per-sample oracles.
//!
//! Rows are drawn as `a_i = (I + v v^T) g_i` with `g_i` standard normal and
//! `v` uniform on `[0, 1]^n`. Least-squares and least-absolute instances
//! interpolate a planted `x0` (`b = A x0`), so `x0` is an exact minimizer.
//! Lasso instances use plain Gaussian rows and an independent Gaussian `b`;
//! their reference optimum comes from [`lasso_reference`].
//!
//! Sample indices are 0-based.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::rng::SaRng;
use crate::vecops::{axpy, dot, norm, norm_sq, sign0};

#[derive(Debug, Error)]
pub enum ProblemError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid constraint: {0}")]
    Constraint(String),
    #[error("instance dump, line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ProblemKind {
    LeastSquares,
    LeastAbsolute,
    Lasso { lambda: f64 },
}

impl ProblemKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::LeastSquares => "least_squares",
            Self::LeastAbsolute => "least_absolute",
            Self::Lasso { .. } => "lasso",
        }
    }

    pub fn lambda(&self) -> f64 {
        match self {
            Self::Lasso { lambda } => *lambda,
            _ => 0.0,
        }
    }

    pub fn from_name(name: &str, lambda: f64) -> Result<Self, ProblemError> {
        match name {
            "least_squares" => Ok(Self::LeastSquares),
            "least_absolute" => Ok(Self::LeastAbsolute),
            "lasso" => {
                if !(lambda.is_finite() && lambda >= 0.0) {
                    return Err(ProblemError::Argument(format!("lambda must be >= 0, got {lambda}")));
                }
                Ok(Self::Lasso { lambda })
            }
            other => Err(ProblemError::Argument(format!("unknown problem kind '{other}'"))),
        }
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProblemInstance {
    pub kind: ProblemKind,
    pub m: usize,
    pub n: usize,
    pub seed: u64,
    /// Row-major `m x n`.
    rows: Vec<f64>,
    targets: Vec<f64>,
    reference: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleOracleResult {
    pub value: f64,
    pub subgradient: Vec<f64>,
    pub index: usize,
}

/// Generates an instance. `lambda` is ignored unless `kind` is lasso.
pub fn gen(kind: ProblemKind, m: usize, n: usize, seed: u64) -> Result<ProblemInstance, ProblemError> {
    if m == 0 || n == 0 {
        return Err(ProblemError::Argument(format!("dimensions must be >= 1, got m={m}, n={n}")));
    }
    let mut rng = SaRng::seed_from_u64(seed);
    let v: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let mut rows = rng.normal_vec(m * n);
    if !matches!(kind, ProblemKind::Lasso { .. }) {
        for row in rows.chunks_exact_mut(n) {
            let proj = dot(row, &v);
            axpy(row, proj, &v);
        }
    }
    let (targets, reference) = match kind {
        ProblemKind::Lasso { .. } => (rng.normal_vec(m), None),
        _ => {
            let x0 = rng.normal_vec(n);
            let b = rows.chunks_exact(n).map(|row| dot(row, &x0)).collect();
            (b, Some(x0))
        }
    };
    Ok(ProblemInstance { kind, m, n, seed, rows, targets, reference })
}

impl ProblemInstance {
    pub fn from_parts(
        kind: ProblemKind,
        n: usize,
        rows: Vec<f64>,
        targets: Vec<f64>,
        reference: Option<Vec<f64>>,
        seed: u64,
    ) -> Result<Self, ProblemError> {
        let m = targets.len();
        if m == 0 || n == 0 || rows.len() != m * n {
            return Err(ProblemError::Argument(format!(
                "inconsistent shapes: {} row entries for m={m}, n={n}",
                rows.len()
            )));
        }
        if !rows.iter().chain(&targets).all(|x| x.is_finite()) {
            return Err(ProblemError::Argument("non-finite data".into()));
        }
        if let Some(r) = &reference {
            if r.len() != n {
                return Err(ProblemError::Argument("reference has wrong dimension".into()));
            }
        }
        Ok(Self { kind, m, n, seed, rows, targets, reference })
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i * self.n..(i + 1) * self.n]
    }

    pub fn rows(&self) -> &[f64] {
        &self.rows
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn reference_optimum(&self) -> Option<&[f64]> {
        self.reference.as_deref()
    }

    pub fn set_reference_optimum(&mut self, x: Vec<f64>) -> Result<(), ProblemError> {
        if x.len() != self.n {
            return Err(ProblemError::Argument("reference has wrong dimension".into()));
        }
        self.reference = Some(x);
        Ok(())
    }

    /// Weight of `||x||_1` in the per-sample composite objective.
    ///
    /// The full lasso objective is `(1/n) sum_i r_i^2 + lambda ||x||_1`, while
    /// the sampled smooth term is `r_i^2`, an unbiased estimate of
    /// `(1/m) sum_i r_i^2`. Scaling the whole objective by `n / m` keeps the
    /// minimizer and gives the per-sample weight `lambda n / m`.
    pub fn sampled_l1_weight(&self) -> f64 {
        self.kind.lambda() * self.n as f64 / self.m as f64
    }

    pub fn residual(&self, x: &[f64], i: usize) -> f64 {
        dot(self.row(i), x) - self.targets[i]
    }

    fn check_index(&self, i: usize) -> Result<(), ProblemError> {
        if i >= self.m {
            return Err(ProblemError::Argument(format!("sample index {i} out of range 0..{}", self.m)));
        }
        Ok(())
    }

    fn check_dim(&self, x: &[f64]) -> Result<(), ProblemError> {
        if x.len() != self.n {
            return Err(ProblemError::Argument(format!("expected dimension {}, got {}", self.n, x.len())));
        }
        Ok(())
    }

    pub fn sample_index(&self, rng: &mut SaRng) -> usize {
        rng.index(self.m)
    }

    /// Per-sample loss `F(x, i)`; for lasso the smooth part only.
    pub fn sample_value(&self, x: &[f64], i: usize) -> f64 {
        let r = self.residual(x, i);
        match self.kind {
            ProblemKind::LeastAbsolute => r.abs(),
            _ => r * r,
        }
    }

    pub fn subgrad(&self, x: &[f64], i: usize) -> Result<SampleOracleResult, ProblemError> {
        self.check_index(i)?;
        self.check_dim(x)?;
        let r = self.residual(x, i);
        let (value, scale) = match self.kind {
            ProblemKind::LeastAbsolute => (r.abs(), sign0(r)),
            _ => (r * r, 2.0 * r),
        };
        let subgradient = self.row(i).iter().map(|a| scale * a).collect();
        Ok(SampleOracleResult { value, subgradient, index: i })
    }

    /// In-place `x -= alpha * g(x, i)`, the hot path of the explicit step.
    pub(crate) fn subgrad_step(&self, x: &mut [f64], i: usize, alpha: f64) {
        let r = self.residual(x, i);
        let scale = match self.kind {
            ProblemKind::LeastAbsolute => sign0(r),
            _ => 2.0 * r,
        };
        axpy(x, -alpha * scale, self.row(i));
    }

    /// `argmin_v F(v, i) + ||v - x||^2 / (2 alpha)`, in closed form.
    pub fn prox_sample(&self, x: &[f64], i: usize, alpha: f64) -> Result<Vec<f64>, ProblemError> {
        self.check_index(i)?;
        self.check_dim(x)?;
        if !(alpha > 0.0) {
            return Err(ProblemError::Argument(format!("alpha must be > 0, got {alpha}")));
        }
        let mut v = x.to_vec();
        self.prox_step(&mut v, i, alpha);
        Ok(v)
    }

    pub(crate) fn prox_step(&self, x: &mut [f64], i: usize, alpha: f64) {
        let a = self.row(i);
        let q = norm_sq(a);
        if q == 0.0 {
            return;
        }
        let r = self.residual(x, i);
        let gamma = match self.kind {
            ProblemKind::LeastAbsolute => sign0(r) * alpha.min(r.abs() / q),
            _ => 2.0 * alpha * r / (1.0 + 2.0 * alpha * q),
        };
        axpy(x, -gamma, a);
    }

    /// Full deterministic objective.
    pub fn objective(&self, x: &[f64]) -> f64 {
        let residuals = (0..self.m).map(|i| self.residual(x, i));
        match self.kind {
            ProblemKind::LeastSquares => residuals.map(|r| r * r).sum(),
            ProblemKind::LeastAbsolute => residuals.map(f64::abs).sum(),
            ProblemKind::Lasso { lambda } => {
                residuals.map(|r| r * r).sum::<f64>() / self.n as f64
                    + lambda * x.iter().map(|v| v.abs()).sum::<f64>()
            }
        }
    }

    /// Text dump: header `kind m n seed lambda`, one line per row with the
    /// target appended, then the reference optimum (or `none`).
    pub fn dump(&self) -> String {
        let mut out = String::with_capacity(self.m * (self.n + 1) * 24);
        out.push_str(&format!(
            "{} {} {} {} {}\n",
            self.kind.name(),
            self.m,
            self.n,
            self.seed,
            fmt_f64(self.kind.lambda())
        ));
        for i in 0..self.m {
            let fields: Vec<String> = self.row(i).iter().chain([&self.targets[i]]).map(|x| fmt_f64(*x)).collect();
            out.push_str(&fields.join(" "));
            out.push('\n');
        }
        match &self.reference {
            Some(x) => out.push_str(&x.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(" ")),
            None => out.push_str("none"),
        }
        out.push('\n');
        out
    }

    pub fn load(text: &str) -> Result<Self, ProblemError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(ProblemError::Parse { line: 1, msg: "empty dump".into() })?;
        let fields: Vec<&str> = header.split_whitespace().collect();
        let perr = |line: usize, msg: String| ProblemError::Parse { line, msg };
        if fields.len() != 5 {
            return Err(perr(1, "header must be 'kind m n seed lambda'".into()));
        }
        let m: usize = parse_field(fields[1], 1)?;
        let n: usize = parse_field(fields[2], 1)?;
        let seed: u64 = parse_field(fields[3], 1)?;
        let lambda: f64 = parse_field(fields[4], 1)?;
        let kind = ProblemKind::from_name(fields[0], lambda).map_err(|e| perr(1, e.to_string()))?;
        let mut rows = Vec::with_capacity(m * n);
        let mut targets = Vec::with_capacity(m);
        for _ in 0..m {
            let (idx, line) = lines.next().ok_or_else(|| perr(m + 2, "truncated dump".into()))?;
            let values = parse_floats(line, idx + 1)?;
            if values.len() != n + 1 {
                return Err(perr(idx + 1, format!("expected {} values, got {}", n + 1, values.len())));
            }
            rows.extend_from_slice(&values[..n]);
            targets.push(values[n]);
        }
        let (idx, line) = lines.next().ok_or_else(|| perr(m + 2, "missing reference line".into()))?;
        let reference = if line.trim() == "none" {
            None
        } else {
            let x = parse_floats(line, idx + 1)?;
            if x.len() != n {
                return Err(perr(idx + 1, format!("reference needs {n} values")));
            }
            Some(x)
        };
        Self::from_parts(kind, n, rows, targets, reference, seed)
    }
}

fn parse_field<T: FromStr>(s: &str, line: usize) -> Result<T, ProblemError> {
    s.parse().map_err(|_| ProblemError::Parse { line, msg: format!("cannot parse '{s}'") })
}

fn parse_floats(line: &str, lineno: usize) -> Result<Vec<f64>, ProblemError> {
    line.split_whitespace().map(|s| parse_field(s, lineno)).collect()
}

/// 17 significant digits: exact decimal round trip.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// Componentwise soft threshold, the prox of `tau ||.||_1`.
pub fn prox_l1(x: &[f64], tau: f64) -> Vec<f64> {
    x.iter().map(|&v| soft_threshold(v, tau)).collect()
}

pub fn soft_threshold(v: f64, tau: f64) -> f64 {
    sign0(v) * (v.abs() - tau).max(0.0)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ConstraintSet {
    WholeSpace,
    Ball { center: Vec<f64>, radius: f64 },
    Box { lo: Vec<f64>, hi: Vec<f64> },
}

impl ConstraintSet {
    pub fn ball(center: Vec<f64>, radius: f64) -> Result<Self, ProblemError> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(ProblemError::Constraint(format!("ball radius must be > 0, got {radius}")));
        }
        Ok(Self::Ball { center, radius })
    }

    pub fn uniform_box(n: usize, lo: f64, hi: f64) -> Result<Self, ProblemError> {
        Self::boxed(vec![lo; n], vec![hi; n])
    }

    pub fn boxed(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, ProblemError> {
        if lo.len() != hi.len() {
            return Err(ProblemError::Constraint("box bounds differ in length".into()));
        }
        if let Some(j) = (0..lo.len()).find(|&j| !(lo[j] <= hi[j])) {
            return Err(ProblemError::Constraint(format!("box bound {j}: lo {} > hi {}", lo[j], hi[j])));
        }
        Ok(Self::Box { lo, hi })
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            Self::WholeSpace => None,
            Self::Ball { center, .. } => Some(center.len()),
            Self::Box { lo, .. } => Some(lo.len()),
        }
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        match self {
            Self::WholeSpace => true,
            Self::Ball { center, radius } => crate::vecops::dist(x, center) <= radius + tol,
            Self::Box { lo, hi } => x.iter().zip(lo.iter().zip(hi)).all(|(v, (l, h))| *v >= l - tol && *v <= h + tol),
        }
    }

    pub(crate) fn project_in_place(&self, x: &mut [f64]) {
        match self {
            Self::WholeSpace => {}
            Self::Ball { center, radius } => {
                let d = crate::vecops::dist(x, center);
                if d > *radius {
                    let scale = radius / d;
                    for (v, c) in x.iter_mut().zip(center) {
                        *v = c + (*v - c) * scale;
                    }
                }
            }
            Self::Box { lo, hi } => {
                for (v, (l, h)) in x.iter_mut().zip(lo.iter().zip(hi)) {
                    *v = v.clamp(*l, *h);
                }
            }
        }
    }
}

/// Euclidean projection onto `c`.
pub fn project(x: &[f64], c: &ConstraintSet) -> Vec<f64> {
    let mut y = x.to_vec();
    c.project_in_place(&mut y);
    y
}

/// Number of full-batch steps used for the stored lasso reference.
pub const LASSO_REFERENCE_STEPS: usize = 100_000;

/// Deterministic full-batch proximal gradient on the lasso objective,
/// started from zero with step `1 / L`.
pub fn lasso_reference(inst: &ProblemInstance, steps: usize) -> Result<Vec<f64>, ProblemError> {
    let lambda = match inst.kind {
        ProblemKind::Lasso { lambda } => lambda,
        other => return Err(ProblemError::Argument(format!("lasso reference requested for {other}"))),
    };
    let n = inst.n;
    let scale = 2.0 / n as f64;
    // gradient of (1/n)||Ax - b||^2 is scale * (G x - A^T b), G = A^T A
    let mut gram = vec![0.0; n * n];
    let mut atb = vec![0.0; n];
    for i in 0..inst.m {
        let a = inst.row(i);
        axpy(&mut atb, inst.targets[i], a);
        for j in 0..n {
            axpy(&mut gram[j * n..(j + 1) * n], a[j], a);
        }
    }
    let lipschitz = scale * max_eigenvalue(&gram, n) * 1.01;
    let step = 1.0 / lipschitz;
    let mut x = vec![0.0; n];
    let mut grad = vec![0.0; n];
    for _ in 0..steps {
        for j in 0..n {
            grad[j] = scale * (dot(&gram[j * n..(j + 1) * n], &x) - atb[j]);
        }
        for j in 0..n {
            x[j] = soft_threshold(x[j] - step * grad[j], step * lambda);
        }
    }
    Ok(x)
}

/// Power iteration for the top eigenvalue of a symmetric PSD matrix.
fn max_eigenvalue(mat: &[f64], n: usize) -> f64 {
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let mut w = vec![0.0; n];
    let mut lambda = 0.0;
    for _ in 0..1000 {
        for j in 0..n {
            w[j] = dot(&mat[j * n..(j + 1) * n], &v);
        }
        let nw = norm(&w);
        if nw == 0.0 {
            return 0.0;
        }
        let next = dot(&v, &w);
        for j in 0..n {
            v[j] = w[j] / nw;
        }
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            return next;
        }
        lambda = next;
    }
    lambda
}
