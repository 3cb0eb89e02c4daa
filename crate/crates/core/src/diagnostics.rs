//! Delayed-supermartingale diagnostics.
//!
//! A process obeying `E[r_{n+2} | F_{n+1}] <= (1 + theta_n) r_{n+1} - theta_n r_n`
//! is not itself a supermartingale, but the rank-one tail products turn the
//! delayed pair into one:
//!
//! ```text
//! V_n = rho_n^T Q_n phi + 2 sum_{k>=n} beta_k
//!     = (1 + t_n) r_{n+1} - t_n r_n + 2 sum_{k>=n} beta_k     (phi_1 + phi_2 = 1)
//! ```
//!
//! This module builds those series from traces and from synthetic processes
//! engineered to satisfy each convergence lemma's hypotheses, then checks the
//! conclusions statistically: conditional expectations are estimated by
//! branching from frozen states, and almost-sure convergence is replaced by
//! tail-window stability across an ensemble of paths.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::momentum_algebra::{tail_coefficients, AlgebraError, TailCoefficients, DEFAULT_TAIL_TOL};
use crate::problems::ProblemInstance;
use crate::rng::SaRng;
use crate::schedules::{MomentumSchedule, ScheduleError, StepSchedule};
use crate::solvers::SolverTrace;

/// Minimum branches for a conditional-expectation estimate.
pub const MIN_BRANCHES: usize = 30;
/// Default z threshold for flagging a supermartingale violation.
pub const DEFAULT_TOL_Z: f64 = 3.0;
/// Default tail-window tolerance for convergence.
pub const DEFAULT_CONVERGENCE_TOL: f64 = 1e-4;
/// Default plateau tolerance for partial sums.
pub const DEFAULT_PLATEAU_TOL: f64 = 1e-3;
/// Largest violation rate a passing report may show.
pub const MAX_VIOLATION_RATE: f64 = 0.01;
/// Smallest fraction of paths that must pass each per-path check.
pub const MIN_PASS_FRACTION: f64 = 0.99;
/// Relative floating-point floor below which an excess of the branch mean
/// over `V_n` is not counted.
pub const NUMERICAL_FLOOR: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("need at least {MIN_BRANCHES} branches for a usable standard error, got {0}")]
    StatisticalPower(usize),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
    #[error(transparent)]
    Schedule(#[from] ScheduleError),
}

/// `r_k = ||v_k - x*||^2` and `z_k = ||v_k - v_{k-1}||^2` with aligned momenta.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSeries {
    pub r: Vec<f64>,
    pub z: Vec<f64>,
    pub thetas: Vec<f64>,
}

impl PairSeries {
    pub fn new(r: Vec<f64>, z: Vec<f64>, thetas: Vec<f64>) -> Result<Self, DiagnosticsError> {
        if r.len() != z.len() || r.len() != thetas.len() {
            return Err(DiagnosticsError::Argument(format!(
                "length mismatch: r {}, z {}, thetas {}",
                r.len(),
                z.len(),
                thetas.len()
            )));
        }
        if r.iter().chain(&z).any(|x| !(*x >= 0.0)) {
            return Err(DiagnosticsError::Argument("series must be nonnegative".into()));
        }
        Ok(Self { r, z, thetas })
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// Squares the distance and increment columns of a trace.
pub fn pair_series_from_trace(trace: &SolverTrace, inst: &ProblemInstance) -> Result<PairSeries, DiagnosticsError> {
    if inst.reference_optimum().is_none() {
        return Err(DiagnosticsError::Config("instance has no reference optimum".into()));
    }
    if trace.diverged() {
        return Err(DiagnosticsError::Argument("trace diverged".into()));
    }
    let cps = &trace.checkpoints;
    PairSeries::new(
        cps.iter().map(|c| c.dist * c.dist).collect(),
        cps.iter().map(|c| c.increment * c.increment).collect(),
        cps.iter().map(|c| c.theta).collect(),
    )
}

/// Nonnegative sequences with exact tails `sum_{k>=n} beta_k`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum BetaFamily {
    Zero,
    /// `beta_k = scale * ratio^k`
    Geometric { scale: f64, ratio: f64 },
    /// `beta_k = scale * k^(-p)`, `p > 1`
    Power { scale: f64, p: f64 },
}

impl BetaFamily {
    pub fn validate(&self) -> Result<(), DiagnosticsError> {
        match *self {
            Self::Zero => Ok(()),
            Self::Geometric { scale, ratio } if scale >= 0.0 && (0.0..1.0).contains(&ratio) => Ok(()),
            Self::Power { scale, p } if scale >= 0.0 && p > 1.0 => Ok(()),
            other => Err(DiagnosticsError::Argument(format!("beta family {other:?} is not summable"))),
        }
    }

    pub fn is_zero(&self) -> bool {
        match *self {
            Self::Zero => true,
            Self::Geometric { scale, .. } | Self::Power { scale, .. } => scale == 0.0,
        }
    }

    /// `beta_k`, 1-based.
    pub fn at(&self, k: usize) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Geometric { scale, ratio } => scale * ratio.powi(k as i32),
            Self::Power { scale, p } => scale * (k as f64).powf(-p),
        }
    }

    /// `sum_{k>=n} beta_k`.
    pub fn tail(&self, n: usize) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Geometric { scale, ratio } => scale * ratio.powi(n as i32) / (1.0 - ratio),
            Self::Power { scale, p } => scale * hurwitz_zeta(p, n as f64),
        }
    }
}

/// `zeta(s, a) = sum_{k>=0} (a + k)^(-s)` for `s > 1`, `a > 0`, by
/// Euler–Maclaurin summation with ten explicit terms.
pub fn hurwitz_zeta(s: f64, a: f64) -> f64 {
    // B_2j / (2j)!
    const COEFFS: [f64; 7] = [
        1.0 / 12.0,
        -1.0 / 720.0,
        1.0 / 30240.0,
        -1.0 / 1_209_600.0,
        1.0 / 47_900_160.0,
        -691.0 / 1_307_674_368_000.0,
        1.0 / 74_724_249_600.0,
    ];
    let terms = 10;
    let mut sum: f64 = (0..terms).map(|k| (a + k as f64).powf(-s)).sum();
    let x = a + terms as f64;
    sum += x.powf(1.0 - s) / (s - 1.0) + 0.5 * x.powf(-s);
    // rising factorial s (s+1) ... (s + 2j - 2), times x^(-s-2j+1)
    let mut rising = s;
    let mut power = x.powf(-s - 1.0);
    for (j, c) in COEFFS.iter().enumerate() {
        sum += c * rising * power;
        let m = 2.0 * j as f64;
        rising *= (s + m + 1.0) * (s + m + 2.0);
        power /= x * x;
    }
    sum
}

#[derive(Clone, Debug, PartialEq)]
pub struct LyapunovSeries {
    /// `V_n` for `n = 1..=values.len()`.
    pub values: Vec<f64>,
    pub t: TailCoefficients,
    pub phi: (f64, f64),
    /// `sum_{k>=n} beta_k` aligned with `values`.
    pub beta_tail: Vec<f64>,
}

fn check_phi(phi: (f64, f64)) -> Result<(), DiagnosticsError> {
    if !(phi.0 > 0.0 && phi.1 > 0.0 && (phi.0 + phi.1 - 1.0).abs() < 1e-12) {
        return Err(DiagnosticsError::Argument(format!("phi must be positive and sum to 1, got {phi:?}")));
    }
    Ok(())
}

/// `V_n = (phi_1 + phi_2)((1 + t_n) r_{n+1} - t_n r_n) + 2 sum_{k>=n} beta_k`
/// for `n = 1..len-1`.
pub fn lyapunov(
    series: &PairSeries,
    t: &TailCoefficients,
    phi: (f64, f64),
    betas: BetaFamily,
) -> Result<LyapunovSeries, DiagnosticsError> {
    check_phi(phi)?;
    betas.validate()?;
    let count = series.len().saturating_sub(1);
    if t.len() < count {
        return Err(DiagnosticsError::Argument(format!(
            "tail coefficients cover {} indices, series needs {count}",
            t.len()
        )));
    }
    let weight = phi.0 + phi.1;
    let r = &series.r;
    let beta_tail: Vec<f64> = (1..=count).map(|n| betas.tail(n)).collect();
    let values = (1..=count)
        .map(|n| {
            let tn = t.values()[n - 1];
            weight * ((1.0 + tn) * r[n] - tn * r[n - 1]) + 2.0 * beta_tail[n - 1]
        })
        .collect();
    Ok(LyapunovSeries { values, t: t.clone(), phi, beta_tail })
}

/// `V_n = r_n + a_{n-1} eta_n`, with `a_0` taken as `a_1`.
pub fn prox_lyapunov(r: &[f64], a: &[f64], eta: &[f64]) -> Result<Vec<f64>, DiagnosticsError> {
    if r.len() != a.len() || r.len() != eta.len() {
        return Err(DiagnosticsError::Argument("r, a and eta must have equal lengths".into()));
    }
    if a.iter().any(|x| !(*x > 0.0)) {
        return Err(DiagnosticsError::Argument("step sequence must be positive".into()));
    }
    if let Some(k) = a.windows(2).position(|w| w[1] > w[0]) {
        return Err(DiagnosticsError::Argument(format!("step sequence increases at index {}", k + 2)));
    }
    Ok((0..r.len())
        .map(|j| {
            let a_prev = if j == 0 { a[0] } else { a[j - 1] };
            r[j] + a_prev * eta[j]
        })
        .collect())
}

/// Averaged relay `r_{n+1} = (1 - theta_n) r_n + theta_n V_{n+1}` with
/// `r_1 = r0`; `thetas[n-1] = theta_n`, `v_path[n-1] = V_n`.
pub fn relay(thetas: &[f64], v_path: &[f64], r0: f64) -> Result<Vec<f64>, DiagnosticsError> {
    if v_path.is_empty() {
        return Ok(Vec::new());
    }
    if thetas.len() + 1 < v_path.len() {
        return Err(DiagnosticsError::Argument("not enough momentum values for the relay".into()));
    }
    let mut out = Vec::with_capacity(v_path.len());
    let mut r = r0;
    out.push(r);
    for n in 1..v_path.len() {
        let theta = thetas[n - 1];
        r = (1.0 - theta) * r + theta * v_path[n];
        out.push(r);
    }
    Ok(out)
}

/// Tail window used when no explicit window is configured.
pub fn default_window(len: usize) -> usize {
    (len / 10).max(100)
}

/// True iff the last `window` entries are finite and span less than `tol`.
pub fn convergence_check(x: &[f64], window: usize, tol: f64) -> Result<bool, DiagnosticsError> {
    if window < 2 {
        return Err(DiagnosticsError::Argument(format!("window must be >= 2, got {window}")));
    }
    if x.len() < window {
        return Err(DiagnosticsError::Argument(format!("sequence of length {} shorter than window {window}", x.len())));
    }
    let tail = &x[x.len() - window..];
    if tail.iter().any(|v| !v.is_finite()) {
        return Ok(false);
    }
    let max = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = tail.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(max - min < tol)
}

/// True iff the partial sums grow by less than `plateau_tol` over the final
/// decade of indices, `[len / 10, len)`.
pub fn summability_check(eta: &[f64], plateau_tol: f64) -> bool {
    let start = eta.len() / 10;
    let growth: f64 = eta[start..].iter().sum();
    growth.is_finite() && growth < plateau_tol
}

/// A Markov process whose Lyapunov value can be probed by branching.
pub trait BranchingProcess: Sync {
    type State: Clone + Send;

    fn initial(&self, rng: &mut SaRng) -> Self::State;
    fn advance(&self, state: &Self::State, rng: &mut SaRng) -> Self::State;
    fn lyapunov(&self, state: &Self::State) -> f64;
}

/// One conditional-expectation probe.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BranchCheck {
    pub path: usize,
    pub step: usize,
    pub v_n: f64,
    pub estimate: f64,
    pub std_err: f64,
    pub z_score: f64,
    pub violation: bool,
}

/// Estimates `E[V_{n+1} | F_n]` from `branches` independent continuations.
pub fn branch_check<P: BranchingProcess>(
    process: &P,
    state: &P::State,
    branches: usize,
    tol_z: f64,
    rng: &mut SaRng,
) -> (f64, f64, f64, f64, bool) {
    let v_n = process.lyapunov(state);
    let samples: Vec<f64> = (0..branches).map(|_| process.lyapunov(&process.advance(state, rng))).collect();
    let b = branches as f64;
    let mean = samples.iter().sum::<f64>() / b;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (b - 1.0);
    let std_err = (var / b).sqrt();
    let excess = mean - v_n;
    let floor = NUMERICAL_FLOOR * v_n.abs().max(1.0);
    let z = if std_err > 0.0 {
        excess / std_err
    } else if excess > floor {
        f64::INFINITY
    } else {
        0.0
    };
    let violation = excess > tol_z * std_err + floor;
    (v_n, mean, std_err, z, violation)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnsembleSettings {
    pub paths: usize,
    pub length: usize,
    pub branches: usize,
    pub tol_z: f64,
    /// Spacing of branch probes along each path.
    pub check_every: usize,
    pub seed: u64,
}

impl EnsembleSettings {
    pub fn new(paths: usize, length: usize, branches: usize, seed: u64) -> Self {
        Self {
            paths,
            length,
            branches,
            tol_z: DEFAULT_TOL_Z,
            check_every: (length / 40).max(1),
            seed,
        }
    }

    fn validate(&self) -> Result<(), DiagnosticsError> {
        if self.paths == 0 {
            return Err(DiagnosticsError::Argument("need at least one path".into()));
        }
        if self.length < 2 {
            return Err(DiagnosticsError::Argument("path length must be >= 2".into()));
        }
        if self.branches < MIN_BRANCHES {
            return Err(DiagnosticsError::StatisticalPower(self.branches));
        }
        if self.check_every == 0 {
            return Err(DiagnosticsError::Argument("check spacing must be >= 1".into()));
        }
        Ok(())
    }
}

/// Simulates one path, probing the Lyapunov value every `check_every` steps.
/// Returns the visited states (`length` of them) and the probes.
fn simulate<P: BranchingProcess>(process: &P, path: usize, s: &EnsembleSettings) -> (Vec<P::State>, Vec<BranchCheck>) {
    let mut rng = SaRng::derived(s.seed, path as u64);
    let mut branch_rng = SaRng::derived(s.seed ^ 0xb7e1_5162_8aed_2a6b, path as u64);
    let mut states = Vec::with_capacity(s.length);
    let mut checks = Vec::new();
    let mut state = process.initial(&mut rng);
    for step in 1..=s.length {
        if step % s.check_every == 0 && step < s.length {
            let (v_n, estimate, std_err, z_score, violation) =
                branch_check(process, &state, s.branches, s.tol_z, &mut branch_rng);
            checks.push(BranchCheck { path, step, v_n, estimate, std_err, z_score, violation });
        }
        states.push(state.clone());
        if step < s.length {
            state = process.advance(&state, &mut rng);
        }
    }
    (states, checks)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CheckReport {
    pub lemma_id: String,
    pub negative_control: Option<String>,
    pub paths_tested: usize,
    pub checks: usize,
    pub supermartingale_violations: usize,
    pub worst_z: f64,
    pub converged_fraction: f64,
    /// Fraction of paths whose slack partial sums plateau, where the lemma
    /// asserts summability.
    pub eta_plateau_fraction: Option<f64>,
    pub eta_partial_sum_plateaued: Option<bool>,
    /// Extra per-path conclusion (increments vanish, relay tracks its input).
    pub secondary: Option<(String, f64)>,
    pub passed: bool,
    pub note: String,
    pub details: Vec<BranchCheck>,
}

impl CheckReport {
    pub fn violation_rate(&self) -> f64 {
        if self.checks == 0 {
            0.0
        } else {
            self.supermartingale_violations as f64 / self.checks as f64
        }
    }

    fn failed(lemma_id: &str, negative_control: Option<String>, note: String) -> Self {
        Self {
            lemma_id: lemma_id.to_string(),
            negative_control,
            paths_tested: 0,
            checks: 0,
            supermartingale_violations: 0,
            worst_z: f64::NAN,
            converged_fraction: 0.0,
            eta_plateau_fraction: None,
            eta_partial_sum_plateaued: None,
            secondary: None,
            passed: false,
            note,
            details: Vec::new(),
        }
    }

    fn absorb_checks(&mut self, checks: Vec<BranchCheck>) {
        self.checks += checks.len();
        self.supermartingale_violations += checks.iter().filter(|c| c.violation).count();
        let worst = checks.iter().map(|c| c.z_score).fold(f64::NEG_INFINITY, f64::max);
        if self.worst_z.is_nan() || worst > self.worst_z {
            self.worst_z = worst;
        }
        self.details.extend(checks);
    }
}

/// Supermartingale probe over an ensemble, without convergence checks.
pub fn supermartingale_check<P: BranchingProcess>(
    process: &P,
    lemma_id: &str,
    settings: &EnsembleSettings,
) -> Result<CheckReport, DiagnosticsError> {
    settings.validate()?;
    let per_path: Vec<Vec<BranchCheck>> =
        (0..settings.paths).into_par_iter().map(|p| simulate(process, p, settings).1).collect();
    let mut report = CheckReport::failed(lemma_id, None, String::new());
    report.paths_tested = settings.paths;
    report.converged_fraction = f64::NAN;
    for checks in per_path {
        report.absorb_checks(checks);
    }
    report.passed = report.violation_rate() < MAX_VIOLATION_RATE;
    Ok(report)
}

/// Lemmas with a synthetic pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LemmaId {
    /// Averaged relay of a convergent sequence.
    Relay,
    /// Delayed inequality, momentum in `[c, d]`.
    Lemma1,
    /// Delayed inequality, constant momentum.
    Lemma2,
    /// Delayed inequality with summable perturbation and slack.
    LemmaRs,
    /// Coupled `(r, z)` system.
    LemmaCouple,
    /// First-order proximal inequality.
    LemmaProx0,
    /// Coupled proximal system.
    LemmaProx,
}

impl LemmaId {
    pub const ALL: [LemmaId; 7] = [
        Self::Relay,
        Self::Lemma1,
        Self::Lemma2,
        Self::LemmaRs,
        Self::LemmaCouple,
        Self::LemmaProx0,
        Self::LemmaProx,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Self::Relay => "prop5",
            Self::Lemma1 => "lemma1",
            Self::Lemma2 => "lemma2",
            Self::LemmaRs => "lemma_rs",
            Self::LemmaCouple => "lemma_couple",
            Self::LemmaProx0 => "lemma_prox0",
            Self::LemmaProx => "lemma_prox",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|id| id.name() == s)
    }

    /// Whether the lemma concludes that the slack is summable.
    pub fn asserts_summable_slack(&self) -> bool {
        matches!(self, Self::LemmaRs | Self::LemmaCouple | Self::LemmaProx)
    }

    fn uses_momentum(&self) -> bool {
        !matches!(self, Self::Relay | Self::LemmaProx0)
    }
}

impl fmt::Display for LemmaId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Deliberate hypothesis violations used to show the checks have power.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum NegativeControl {
    /// Constant upward drift added to every step.
    Drift(f64),
    /// Constant momentum at or above one.
    Momentum(f64),
}

impl NegativeControl {
    pub fn label(&self) -> String {
        match self {
            Self::Drift(d) => format!("drift={d}"),
            Self::Momentum(t) => format!("theta={t}"),
        }
    }
}

/// Parameters of the synthetic generators. Noise is `sigma * gamma^n * W`
/// with `W` uniform on `[-1, 1]`; the slack is `eta0 * eta_decay^n` unless
/// the lemma ties it to the coupled state.
#[derive(Clone, Debug, PartialEq)]
pub struct LemmaParams {
    pub momentum: MomentumSchedule,
    pub sigma: f64,
    pub noise_decay: f64,
    pub eta0: f64,
    pub eta_decay: f64,
    pub beta: BetaFamily,
    pub r_init: f64,
    /// Coupling weight `h`.
    pub h: f64,
    /// Contraction `zeta` (or `p`) of the coupled sequence.
    pub zeta: f64,
    pub z_init: f64,
    /// Multiplicative noise level of the coupled sequence.
    pub z_noise: f64,
    /// Fraction of the coupling term realised as slack.
    pub kappa: f64,
    /// Decreasing weights `a_k` of the proximal lemmas.
    pub weights: StepSchedule,
    /// Initial value of the auxiliary decreasing sequence (proximal lemmas).
    pub aux_init: f64,
    /// Lower bound of the per-step shrink factor of the auxiliary sequence.
    pub aux_shrink: f64,
    pub phi: (f64, f64),
    pub control: Option<NegativeControl>,
}

impl LemmaParams {
    pub fn defaults(id: LemmaId) -> Self {
        let base = Self {
            momentum: MomentumSchedule::Constant { theta: 0.5 },
            sigma: 0.01,
            noise_decay: 0.99,
            eta0: 1e-3,
            eta_decay: 0.97,
            beta: BetaFamily::Zero,
            r_init: 500.0,
            h: 1.0,
            zeta: 0.1,
            z_init: 1.0,
            z_noise: 0.05,
            kappa: 0.5,
            weights: StepSchedule::Power { c: 0.5, s: 3.0, p: 8.0 / 9.0 },
            aux_init: 1.0,
            aux_shrink: 0.9,
            phi: (0.5, 0.5),
            control: None,
        };
        match id {
            LemmaId::Relay => Self {
                r_init: 0.0,
                aux_init: 5.0,
                sigma: 0.1,
                ..base
            },
            LemmaId::Lemma1 => Self {
                momentum: MomentumSchedule::Power { c: 0.9, s: 1.0, p: 0.1 },
                ..base
            },
            LemmaId::Lemma2 => Self {
                momentum: MomentumSchedule::Constant { theta: 0.9 },
                r_init: 1000.0,
                ..base
            },
            LemmaId::LemmaRs => Self {
                momentum: MomentumSchedule::HarmonicOffset { s: 1.0 },
                beta: BetaFamily::Geometric { scale: 1e-2, ratio: 0.97 },
                eta0: 1e-2,
                r_init: 200.0,
                ..base
            },
            LemmaId::LemmaCouple => Self {
                momentum: MomentumSchedule::Constant { theta: 0.5 },
                ..base
            },
            LemmaId::LemmaProx0 => Self {
                momentum: MomentumSchedule::Constant { theta: 0.0 },
                eta_decay: 0.95,
                r_init: 100.0,
                ..base
            },
            LemmaId::LemmaProx => Self {
                momentum: MomentumSchedule::HarmonicOffset { s: 1.0 },
                zeta: 0.2,
                r_init: 1000.0,
                ..base
            },
        }
    }
}

/// State of a synthetic path at index `n`.
///
/// For the delayed lemmas `r_prev = r_n`, `r_curr = r_{n+1}` and
/// `z = z_{n+1}`; the first-order lemma keeps `r_curr = r_n`. `aux` holds
/// `V_n` for the relay, `eta_n` for the first-order proximal lemma and the
/// decreasing sequence `rho_n` for the coupled proximal lemma.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PathState {
    pub n: usize,
    pub r_prev: f64,
    pub r_curr: f64,
    pub z: f64,
    pub aux: f64,
    /// Per-path momentum of the relay.
    pub theta: f64,
    /// Slack realised by the step that produced this state.
    pub eta_last: f64,
}

/// A hypothesis-satisfying generator for one lemma.
#[derive(Clone, Debug)]
pub struct SyntheticProcess {
    pub id: LemmaId,
    pub params: LemmaParams,
    /// `theta_n`, 1-based via `theta(n)`.
    thetas: Vec<f64>,
    tails: Option<TailCoefficients>,
    drift: f64,
}

impl SyntheticProcess {
    /// Validates the parameters for paths of `length` states.
    ///
    /// Refuses parameter sets under which a path could turn negative, since
    /// clamping would break the conditional inequality.
    pub fn new(id: LemmaId, params: LemmaParams, length: usize) -> Result<Self, DiagnosticsError> {
        params.beta.validate()?;
        let p = &params;
        if !(p.sigma >= 0.0 && (0.0..=1.0).contains(&p.noise_decay)) {
            return Err(DiagnosticsError::Config("noise must be sigma >= 0 with decay in [0, 1]".into()));
        }
        if !(p.eta0 >= 0.0 && (0.0..=1.0).contains(&p.eta_decay)) {
            return Err(DiagnosticsError::Config("slack must be eta0 >= 0 with decay in [0, 1]".into()));
        }
        if !(p.zeta > 0.0 && p.zeta < 1.0) {
            return Err(DiagnosticsError::Config(format!("contraction must lie in (0, 1), got {}", p.zeta)));
        }
        if !(p.z_noise >= 0.0 && (1.0 - p.zeta) * (1.0 + p.z_noise) <= 1.0) {
            return Err(DiagnosticsError::Config("coupled noise would let z grow".into()));
        }
        if !(0.0..=1.0).contains(&p.kappa) || p.kappa > p.h {
            return Err(DiagnosticsError::Config("slack fraction must satisfy 0 <= kappa <= min(1, h)".into()));
        }
        if !(p.aux_shrink > 0.0 && p.aux_shrink <= 1.0 && p.aux_init >= 0.0) {
            return Err(DiagnosticsError::Config("auxiliary sequence must be nonnegative and shrink".into()));
        }
        check_phi(p.phi)?;

        let (drift, forced_theta) = match p.control {
            None => (0.0, None),
            Some(NegativeControl::Drift(d)) => (d, None),
            Some(NegativeControl::Momentum(t)) => (0.0, Some(t)),
        };

        if forced_theta.is_some() && matches!(id, LemmaId::Relay | LemmaId::LemmaProx0) {
            return Err(DiagnosticsError::Argument(format!("{id} has no momentum to perturb")));
        }
        let horizon = length + 2;
        let momentum = match forced_theta {
            Some(theta) => MomentumSchedule::constant(theta)
                .map_err(|e| DiagnosticsError::Config(format!("momentum control: {e}")))?,
            None => p.momentum,
        };
        let (thetas, tails) = match forced_theta {
            _ if id.uses_momentum() => {
                let t = tail_coefficients(&momentum, horizon, DEFAULT_TAIL_TOL)?;
                let thetas = (1..=horizon).map(|k| t.theta(k).expect("stored")).collect();
                (thetas, Some(t))
            }
            _ => (vec![0.0; horizon], None),
        };

        if let Some(t) = &tails {
            let t_max = t.values().iter().copied().fold(0.0, f64::max);
            if !p.beta.is_zero() && t_max > 1.0 {
                return Err(DiagnosticsError::Config(format!(
                    "beta tail weight 2 needs t_n <= 1, schedule reaches {t_max:.3}"
                )));
            }
        }

        if forced_theta.is_none() && id != LemmaId::Relay {
            let d = thetas.iter().copied().fold(0.0, f64::max);
            let max_drop = match id {
                LemmaId::LemmaCouple => p.kappa * p.zeta * p.z_init,
                LemmaId::LemmaProx => p.kappa * p.zeta * p.z_init,
                LemmaId::LemmaProx0 => p.weights.eval(1) * p.eta0,
                _ => p.eta0,
            };
            let floor = length as f64 * (p.sigma + max_drop) * (1.0 + d) / (1.0 - d);
            if !(p.r_init > floor) {
                return Err(DiagnosticsError::Config(format!(
                    "{id}: initial value {} does not exceed the nonnegativity floor {floor:.3}",
                    p.r_init
                )));
            }
        }

        Ok(Self { id, params, thetas, tails, drift })
    }

    fn theta(&self, n: usize) -> f64 {
        self.thetas[(n - 1).min(self.thetas.len() - 1)]
    }

    fn t(&self, n: usize) -> f64 {
        let t = self.tails.as_ref().expect("momentum lemmas carry tail coefficients");
        t.get(n.min(t.len())).expect("stored")
    }

    fn noise(&self, n: usize, rng: &mut SaRng) -> f64 {
        self.params.sigma * self.params.noise_decay.powi(n as i32) * rng.symmetric()
    }

    fn weight(&self, n: usize) -> f64 {
        self.params.weights.eval(n.max(1))
    }

    /// Tail coefficients, when the lemma uses momentum.
    pub fn tail_coefficients(&self) -> Option<&TailCoefficients> {
        self.tails.as_ref()
    }
}

impl BranchingProcess for SyntheticProcess {
    type State = PathState;

    fn initial(&self, rng: &mut SaRng) -> PathState {
        let p = &self.params;
        let mut s = PathState {
            n: 1,
            r_prev: p.r_init,
            r_curr: p.r_init,
            z: p.z_init,
            aux: p.aux_init,
            theta: 0.0,
            eta_last: 0.0,
        };
        match self.id {
            LemmaId::Relay => s.theta = 0.1 + 0.8 * rng.uniform(),
            LemmaId::LemmaProx0 => s.aux = p.eta0,
            _ => {}
        }
        s
    }

    fn advance(&self, s: &PathState, rng: &mut SaRng) -> PathState {
        let p = &self.params;
        let n = s.n;
        let mut next = *s;
        next.n = n + 1;
        match self.id {
            LemmaId::Relay => {
                let v_next = s.aux + self.noise(n, rng) + self.drift;
                next.aux = v_next;
                next.r_curr = (1.0 - s.theta) * s.r_curr + s.theta * v_next;
            }
            LemmaId::Lemma1 | LemmaId::Lemma2 | LemmaId::LemmaRs => {
                let theta = self.theta(n);
                let eta = p.eta0 * p.eta_decay.powi(n as i32);
                let r_next = (1.0 + theta) * s.r_curr - theta * s.r_prev + p.beta.at(n) - eta
                    + self.noise(n, rng)
                    + self.drift;
                next.r_prev = s.r_curr;
                next.r_curr = r_next;
                next.eta_last = eta;
            }
            LemmaId::LemmaCouple => {
                let theta = self.theta(n);
                let eta = p.kappa * p.zeta * s.z;
                let z_next = (1.0 - p.zeta) * s.z * (1.0 + p.z_noise * rng.symmetric());
                let r_next = (1.0 + theta) * s.r_curr - theta * s.r_prev - eta + p.h * p.zeta * s.z
                    + p.beta.at(n)
                    + self.noise(n, rng)
                    + self.drift;
                next.r_prev = s.r_curr;
                next.r_curr = r_next;
                next.z = z_next;
                next.eta_last = eta;
            }
            LemmaId::LemmaProx0 => {
                let a_n = self.weight(n);
                let eta_next = s.aux * p.eta_decay * (1.0 + p.z_noise * rng.symmetric());
                next.r_curr = s.r_curr - a_n * (eta_next - s.aux) + self.noise(n, rng) + self.drift;
                next.aux = eta_next;
                next.eta_last = eta_next;
            }
            LemmaId::LemmaProx => {
                let theta = self.theta(n);
                let a_n = self.weight(n);
                let rho_next = s.aux * (p.aux_shrink + (1.0 - p.aux_shrink) * rng.uniform());
                let z_next =
                    (1.0 - p.zeta) * s.z * (1.0 + p.z_noise * rng.symmetric()) - a_n * (rho_next - s.aux);
                let eta = p.kappa * p.zeta * s.z;
                let r_next = (1.0 + theta) * s.r_curr - theta * s.r_prev - eta + p.h * p.zeta * s.z
                    + p.beta.at(n)
                    + self.noise(n, rng)
                    + self.drift;
                next.r_prev = s.r_curr;
                next.r_curr = r_next;
                next.z = z_next;
                next.aux = rho_next;
                next.eta_last = eta;
            }
        }
        next
    }

    fn lyapunov(&self, s: &PathState) -> f64 {
        let p = &self.params;
        let n = s.n;
        let weight = p.phi.0 + p.phi.1;
        let beta_tail = 2.0 * p.beta.tail(n);
        match self.id {
            LemmaId::Relay => s.aux,
            LemmaId::Lemma1 | LemmaId::Lemma2 | LemmaId::LemmaRs => {
                let t = self.t(n);
                weight * ((1.0 + t) * s.r_curr - t * s.r_prev) + beta_tail
            }
            LemmaId::LemmaCouple => {
                let t = self.t(n);
                weight * ((1.0 + t) * (s.r_curr + p.h * s.z) - t * s.r_prev) + beta_tail
            }
            LemmaId::LemmaProx0 => s.r_curr + self.weight(n - 1) * s.aux,
            LemmaId::LemmaProx => {
                let t = self.t(n);
                let coupled = s.z + self.weight(n - 1) * s.aux;
                weight * ((1.0 + t) * (s.r_curr + p.h * coupled) - t * s.r_prev) + beta_tail
            }
        }
    }
}

/// A simulated path: the pair series plus realised slack and Lyapunov values.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticPath {
    pub series: PairSeries,
    pub eta: Vec<f64>,
    pub lyapunov: Vec<f64>,
}

fn path_from_states(process: &SyntheticProcess, states: &[PathState]) -> SyntheticPath {
    let r = states.iter().map(|s| s.r_curr).collect();
    let z = states.iter().map(|s| s.z.max(0.0)).collect();
    let thetas = states.iter().map(|s| if process.id == LemmaId::Relay { s.theta } else { process.theta(s.n) }).collect();
    SyntheticPath {
        series: PairSeries { r, z, thetas },
        eta: states.iter().skip(1).map(|s| s.eta_last).collect(),
        lyapunov: states.iter().map(|s| process.lyapunov(s)).collect(),
    }
}

/// Generates `paths` independent paths of `length` states.
pub fn synth_paths(
    id: LemmaId,
    params: LemmaParams,
    seed: u64,
    paths: usize,
    length: usize,
) -> Result<Vec<SyntheticPath>, DiagnosticsError> {
    let process = SyntheticProcess::new(id, params, length)?;
    let settings = EnsembleSettings {
        paths,
        length,
        branches: MIN_BRANCHES,
        tol_z: DEFAULT_TOL_Z,
        check_every: usize::MAX,
        seed,
    };
    Ok((0..paths)
        .into_par_iter()
        .map(|p| path_from_states(&process, &simulate(&process, p, &settings).0))
        .collect())
}

/// Tolerances of the per-path conclusions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConclusionTolerances {
    pub convergence: f64,
    pub plateau: f64,
    /// Largest admissible tail value of a sequence that must vanish.
    pub vanishing: f64,
}

impl Default for ConclusionTolerances {
    fn default() -> Self {
        Self {
            convergence: DEFAULT_CONVERGENCE_TOL,
            plateau: DEFAULT_PLATEAU_TOL,
            vanishing: 1e-3,
        }
    }
}

/// Hypotheses-to-conclusions pipeline for one lemma: supermartingale probes,
/// tail convergence of `r` and `V`, slack summability and the lemma-specific
/// secondary conclusion. Parameter sets the generator refuses produce a
/// failed report carrying the reason.
pub fn run_lemma(
    id: LemmaId,
    params: LemmaParams,
    settings: &EnsembleSettings,
    tols: ConclusionTolerances,
) -> Result<CheckReport, DiagnosticsError> {
    settings.validate()?;
    let control = params.control.map(|c| c.label());
    let process = match SyntheticProcess::new(id, params, settings.length) {
        Ok(p) => p,
        Err(e @ (DiagnosticsError::Config(_) | DiagnosticsError::Algebra(_) | DiagnosticsError::Schedule(_))) => {
            let note = format!("hypotheses rejected: {e}");
            if control.is_none() {
                return Err(e);
            }
            // a control without a valid Lyapunov function is simulated for
            // the convergence verdict only
            return Ok(control_without_lyapunov(id, settings, tols, control, note));
        }
        Err(e) => return Err(e),
    };
    let window = default_window(settings.length);

    struct PathVerdict {
        checks: Vec<BranchCheck>,
        converged: bool,
        plateau: bool,
        secondary: bool,
    }

    let verdicts: Vec<PathVerdict> = (0..settings.paths)
        .into_par_iter()
        .map(|p| {
            let (states, checks) = simulate(&process, p, settings);
            let path = path_from_states(&process, &states);
            let r_conv = convergence_check(&path.series.r, window, tols.convergence).unwrap_or(false);
            let v_conv = convergence_check(&path.lyapunov, window, tols.convergence).unwrap_or(false);
            let plateau = summability_check(&path.eta, tols.plateau);
            let secondary = match id {
                LemmaId::Relay => {
                    let last = states.last().expect("length >= 2");
                    (last.r_curr - last.aux).abs() < tols.convergence
                }
                LemmaId::LemmaCouple | LemmaId::LemmaProx => {
                    let z = &path.series.z;
                    z[z.len() - window..].iter().all(|v| *v < tols.vanishing)
                }
                _ => true,
            };
            PathVerdict { checks, converged: r_conv && v_conv, plateau, secondary }
        })
        .collect();

    let paths = settings.paths as f64;
    let mut report = CheckReport::failed(id.name(), control, String::new());
    report.paths_tested = settings.paths;
    report.converged_fraction = verdicts.iter().filter(|v| v.converged).count() as f64 / paths;
    let plateau_fraction = verdicts.iter().filter(|v| v.plateau).count() as f64 / paths;
    if id.asserts_summable_slack() {
        report.eta_plateau_fraction = Some(plateau_fraction);
        report.eta_partial_sum_plateaued = Some(plateau_fraction >= MIN_PASS_FRACTION);
    }
    let secondary_fraction = verdicts.iter().filter(|v| v.secondary).count() as f64 / paths;
    report.secondary = match id {
        LemmaId::Relay => Some(("relay_tracks_input".into(), secondary_fraction)),
        LemmaId::LemmaCouple | LemmaId::LemmaProx => Some(("z_vanishes".into(), secondary_fraction)),
        _ => None,
    };
    for v in verdicts {
        report.absorb_checks(v.checks);
    }
    let mut failures = Vec::new();
    if report.violation_rate() >= MAX_VIOLATION_RATE {
        failures.push(format!("violation rate {:.4}", report.violation_rate()));
    }
    if report.converged_fraction < MIN_PASS_FRACTION {
        failures.push(format!("converged fraction {:.3}", report.converged_fraction));
    }
    if report.eta_partial_sum_plateaued == Some(false) {
        failures.push(format!("slack plateau fraction {plateau_fraction:.3}"));
    }
    if let Some((name, frac)) = &report.secondary {
        if *frac < MIN_PASS_FRACTION {
            failures.push(format!("{name} fraction {frac:.3}"));
        }
    }
    report.passed = failures.is_empty();
    report.note = if failures.is_empty() { "ok".into() } else { failures.join("; ") };
    Ok(report)
}

/// Momentum at or above one has no tail coefficients; the control still runs
/// the raw recursion so the report shows the convergence verdict.
fn control_without_lyapunov(
    id: LemmaId,
    settings: &EnsembleSettings,
    tols: ConclusionTolerances,
    control: Option<String>,
    note: String,
) -> CheckReport {
    let mut report = CheckReport::failed(id.name(), control, note);
    report.paths_tested = settings.paths;
    let theta = report
        .negative_control
        .as_deref()
        .and_then(|c| c.strip_prefix("theta="))
        .and_then(|t| t.parse::<f64>().ok());
    if let Some(theta) = theta {
        let params = LemmaParams::defaults(id);
        let window = default_window(settings.length);
        let converged = (0..settings.paths)
            .filter(|&p| {
                let mut rng = SaRng::derived(settings.seed, p as u64);
                let (mut prev, mut curr) = (params.r_init, params.r_init);
                let mut r = Vec::with_capacity(settings.length);
                r.push(curr);
                for n in 1..settings.length {
                    let noise = params.sigma * params.noise_decay.powi(n as i32) * rng.symmetric();
                    let next = (1.0 + theta) * curr - theta * prev + noise;
                    prev = curr;
                    curr = next;
                    r.push(curr);
                }
                convergence_check(&r, window, tols.convergence).unwrap_or(false)
            })
            .count();
        report.converged_fraction = converged as f64 / settings.paths as f64;
        report.note = format!("{}; converged fraction {:.3}", report.note, report.converged_fraction);
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::momentum_algebra::{mat_mul, ProductKind};
    use crate::solvers::{Checkpoint, Method, SolverTrace, TraceMetadata};

    fn constant_tails(theta: f64, n: usize) -> TailCoefficients {
        tail_coefficients(&MomentumSchedule::constant(theta).unwrap(), n, 1e-12).unwrap()
    }

    #[test]
    fn pair_series_validation() {
        assert!(PairSeries::new(vec![1.0], vec![0.0, 1.0], vec![0.5]).is_err());
        assert!(PairSeries::new(vec![-1.0], vec![0.0], vec![0.5]).is_err());
    }

    fn toy_trace(dists: &[f64], incs: &[f64]) -> SolverTrace {
        let step = StepSchedule::constant(0.1).unwrap();
        let momentum = MomentumSchedule::constant(0.5).unwrap();
        SolverTrace {
            checkpoints: dists
                .iter()
                .zip(incs)
                .enumerate()
                .map(|(k, (d, i))| Checkpoint { k: k + 1, dist: *d, obj_gap: 0.0, increment: *i, alpha: 0.1, theta: 0.5 })
                .collect(),
            metadata: TraceMetadata {
                method: Method::Ssgd,
                step,
                momentum,
                constraint: "whole".into(),
                composite_order: crate::solvers::CompositeOrder::ExplicitFirst,
                iterations: dists.len(),
                seed: 0,
                rng: crate::rng::RNG_ID,
                step_validity: step.classify(),
                momentum_nonincreasing: true,
                hypotheses: vec![],
                initial_dist: 0.0,
                diverged: false,
                diverged_at: None,
            },
        }
    }

    #[test]
    fn pair_series_from_hand_trace() {
        let inst = ProblemInstance::from_parts(
            crate::problems::ProblemKind::LeastSquares,
            1,
            vec![1.0],
            vec![0.0],
            Some(vec![0.0]),
            0,
        )
        .unwrap();
        // iterates (0), (1), (1) from x* = (0)
        let s = pair_series_from_trace(&toy_trace(&[0.0, 1.0, 1.0], &[0.0, 1.0, 0.0]), &inst).unwrap();
        assert_eq!(s.r, vec![0.0, 1.0, 1.0]);
        assert_eq!(s.z[1..], [1.0, 0.0]);
        let s = pair_series_from_trace(&toy_trace(&[2.0; 4], &[0.0; 4]), &inst).unwrap();
        assert!(s.z.iter().all(|z| *z == 0.0));
        let no_ref =
            ProblemInstance::from_parts(crate::problems::ProblemKind::LeastSquares, 1, vec![1.0], vec![0.0], None, 0)
                .unwrap();
        assert!(matches!(
            pair_series_from_trace(&toy_trace(&[1.0], &[0.0]), &no_ref),
            Err(DiagnosticsError::Config(_))
        ));
    }

    #[test]
    fn lyapunov_examples() {
        let t = constant_tails(0.5, 10);
        let s = PairSeries::new(vec![3.0; 5], vec![0.0; 5], vec![0.5; 5]).unwrap();
        let v = lyapunov(&s, &t, (0.5, 0.5), BetaFamily::Zero).unwrap();
        assert!(v.values.iter().all(|x| (x - 3.0).abs() < 1e-15));

        let s = PairSeries::new(vec![1.0, 0.5], vec![0.0; 2], vec![0.5; 2]).unwrap();
        let v = lyapunov(&s, &t, (0.5, 0.5), BetaFamily::Zero).unwrap();
        assert_eq!(v.values, vec![0.0]);

        let s = PairSeries::new(vec![0.0, 0.0], vec![0.0; 2], vec![0.5; 2]).unwrap();
        let v = lyapunov(&s, &t, (0.5, 0.5), BetaFamily::Geometric { scale: 1.0, ratio: 0.5 }).unwrap();
        assert!((v.values[0] - 2.0).abs() < 1e-15);

        let short = constant_tails(0.5, 1);
        let s = PairSeries::new(vec![1.0; 4], vec![0.0; 4], vec![0.5; 4]).unwrap();
        assert!(lyapunov(&s, &short, (0.5, 0.5), BetaFamily::Zero).is_err());
        assert!(lyapunov(&s, &t, (0.5, 0.6), BetaFamily::Zero).is_err());
    }

    #[test]
    fn lyapunov_matches_matrix_form() {
        let mut rng = SaRng::seed_from_u64(5);
        let sched = MomentumSchedule::power(0.8, 1.0, 0.3).unwrap();
        let t = tail_coefficients(&sched, 60, 1e-13).unwrap();
        for _ in 0..20 {
            let r: Vec<f64> = (0..50).map(|_| 10.0 * rng.uniform()).collect();
            let phi0 = 0.05 + 0.9 * rng.uniform();
            let phi = (phi0, 1.0 - phi0);
            let beta = BetaFamily::Power { scale: rng.uniform(), p: 1.5 + rng.uniform() };
            let s = PairSeries::new(r.clone(), vec![0.0; 50], vec![0.0; 50]).unwrap();
            let v = lyapunov(&s, &t, phi, beta).unwrap();
            let total: f64 = (1..2_000_000).map(|k| beta.at(k)).sum();
            let mut head = 0.0;
            for n in 1..50 {
                // rho_n^T Q_n phi, computed by explicit 2x2 products
                let q = t.tail_product(n).unwrap();
                assert_eq!(q.kind, ProductKind::Tail);
                let row = [[r[n - 1], r[n]], [0.0, 0.0]];
                let rq = mat_mul(&row, &q.entries);
                let matrix_form = rq[0][0] * phi.0 + rq[0][1] * phi.1;
                // beta tail by direct summation far past the Euler–Maclaurin point
                let direct = total - head;
                head += beta.at(n);
                let expected = matrix_form + 2.0 * direct;
                assert!((v.values[n - 1] - expected).abs() < 1e-10 * (1.0 + expected.abs()) + 2.0 * beta_tail_remainder(beta));
            }
        }
    }

    fn beta_tail_remainder(beta: BetaFamily) -> f64 {
        match beta {
            // sum_{k >= 2e6} scale k^-p <= scale (2e6)^(1-p) / (p-1)
            BetaFamily::Power { scale, p } => scale * 2e6f64.powf(1.0 - p) / (p - 1.0),
            _ => 0.0,
        }
    }

    #[test]
    fn hurwitz_zeta_matches_known_values() {
        let pi = std::f64::consts::PI;
        assert!((hurwitz_zeta(2.0, 1.0) - pi * pi / 6.0).abs() < 1e-14);
        assert!((hurwitz_zeta(4.0, 1.0) - pi.powi(4) / 90.0).abs() < 1e-14);
        // zeta(2, 3) = pi^2/6 - 1 - 1/4
        assert!((hurwitz_zeta(2.0, 3.0) - (pi * pi / 6.0 - 1.25)).abs() < 1e-14);
    }

    #[test]
    fn constant_momentum_closed_form() {
        // with t = theta / (1 - theta), (1 + t) r_{n+1} - t r_n = (r_{n+1} - theta r_n) / (1 - theta)
        let theta = 0.7;
        let t = constant_tails(theta, 30);
        let mut rng = SaRng::seed_from_u64(1);
        let r: Vec<f64> = (0..30).map(|_| rng.uniform()).collect();
        let s = PairSeries::new(r.clone(), vec![0.0; 30], vec![theta; 30]).unwrap();
        let v = lyapunov(&s, &t, (0.5, 0.5), BetaFamily::Zero).unwrap();
        for n in 1..30 {
            let closed = (r[n] - theta * r[n - 1]) / (1.0 - theta);
            assert!((v.values[n - 1] - closed).abs() < 1e-10);
        }
    }

    #[test]
    fn prox_lyapunov_examples() {
        assert_eq!(prox_lyapunov(&[1.0, 2.0], &[0.5, 0.25], &[0.0, 0.0]).unwrap(), vec![1.0, 2.0]);
        let v = prox_lyapunov(&[1.0, 1.0], &[0.5, 0.25], &[0.0, 2.0]).unwrap();
        assert_eq!(v[1], 2.0);
        assert_eq!(prox_lyapunov(&[0.0; 3], &[1.0; 3], &[0.0; 3]).unwrap(), vec![0.0; 3]);
        assert!(prox_lyapunov(&[0.0; 2], &[0.5, 0.6], &[0.0; 2]).is_err());
    }

    #[test]
    fn relay_examples() {
        let r = relay(&[0.3; 200], &[4.0; 201], 10.0).unwrap();
        assert!((r[200] - 4.0).abs() < 1e-20 + 6.0 * 0.7f64.powi(200) * 1.01);
        let r = relay(&[0.0; 10], &[4.0; 11], 10.0).unwrap();
        assert!(r.iter().all(|x| *x == 10.0));
        let v: Vec<f64> = (1..=40).map(|n| 2.0 + 0.5f64.powi(n)).collect();
        let r = relay(&[0.5; 40], &v, 10.0).unwrap();
        assert!((r[39] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn relay_converges_for_convergent_inputs() {
        let mut rng = SaRng::seed_from_u64(8);
        for _ in 0..50 {
            let v_inf = 10.0 * rng.uniform();
            let theta = 0.1 + 0.8 * rng.uniform();
            let v: Vec<f64> = (0..5000).map(|n| v_inf + rng.symmetric() * 0.995f64.powi(n)).collect();
            let r = relay(&vec![theta; 5000], &v, 0.0).unwrap();
            assert!(convergence_check(&r, 500, 1e-4).unwrap());
            assert!((r[4999] - v_inf).abs() < 1e-4);
        }
    }

    #[test]
    fn convergence_examples() {
        assert!(convergence_check(&[1.0; 10], 5, 1e-9).unwrap());
        let lin: Vec<f64> = (0..10).map(|n| n as f64).collect();
        assert!(!convergence_check(&lin, 5, 1e-3).unwrap());
        let geo: Vec<f64> = (1..=200).map(|n| 1.0 + 0.9f64.powi(n)).collect();
        assert!(convergence_check(&geo, 100, 1e-3).unwrap());
        assert!(convergence_check(&[1.0; 3], 5, 1.0).is_err());
        assert!(convergence_check(&[1.0; 3], 1, 1.0).is_err());
        assert!(!convergence_check(&[1.0, f64::NAN, 1.0], 2, 1.0).unwrap());
    }

    #[test]
    fn summability_examples() {
        let geo: Vec<f64> = (1..=1000).map(|k| 0.5f64.powi(k)).collect();
        assert!(summability_check(&geo, 1e-3));
        let harmonic: Vec<f64> = (1..=100_000).map(|k| 1.0 / k as f64).collect();
        assert!(!summability_check(&harmonic, 1e-3));
        let growth: f64 = harmonic[10_000..].iter().sum();
        assert!((growth - 10f64.ln()).abs() < 1e-3);
        assert!(summability_check(&[0.0; 50], 1e-3));
    }

    struct Decreasing;

    impl BranchingProcess for Decreasing {
        type State = f64;
        fn initial(&self, _: &mut SaRng) -> f64 {
            100.0
        }
        fn advance(&self, s: &f64, _: &mut SaRng) -> f64 {
            s * 0.99
        }
        fn lyapunov(&self, s: &f64) -> f64 {
            *s
        }
    }

    #[test]
    fn deterministic_decreasing_has_no_violations() {
        let report = supermartingale_check(&Decreasing, "decreasing", &EnsembleSettings::new(5, 200, 30, 1)).unwrap();
        assert_eq!(report.supermartingale_violations, 0);
        assert!(report.checks > 0 && report.passed);
    }

    #[test]
    fn too_few_branches() {
        let err = supermartingale_check(&Decreasing, "x", &EnsembleSettings::new(5, 200, 29, 1)).unwrap_err();
        assert!(matches!(err, DiagnosticsError::StatisticalPower(29)));
    }

    #[test]
    fn martingale_calibration() {
        let params = LemmaParams { eta0: 0.0, ..LemmaParams::defaults(LemmaId::Lemma2) };
        let process = SyntheticProcess::new(LemmaId::Lemma2, params, 2000).unwrap();
        let mut settings = EnsembleSettings::new(250, 2000, 200, 17);
        settings.check_every = 50;
        let report = supermartingale_check(&process, "lemma2-martingale", &settings).unwrap();
        assert!(report.checks >= 9_750, "{}", report.checks);
        assert!(report.violation_rate() < 0.01, "{}", report.violation_rate());
        // z-scores centred near zero while the noise dominates the floor
        let early: Vec<f64> = report.details.iter().filter(|c| c.step <= 500).map(|c| c.z_score).collect();
        let mean = early.iter().sum::<f64>() / early.len() as f64;
        assert!(mean.abs() < 0.1, "{mean}");
    }

    #[test]
    fn broken_generator_is_flagged() {
        let params = LemmaParams {
            control: Some(NegativeControl::Drift(0.05)),
            ..LemmaParams::defaults(LemmaId::Lemma1)
        };
        let process = SyntheticProcess::new(LemmaId::Lemma1, params, 400).unwrap();
        let report = supermartingale_check(&process, "lemma1", &EnsembleSettings::new(20, 400, 50, 2)).unwrap();
        assert!(report.violation_rate() > 0.5);
        assert!(!report.passed);
    }

    #[test]
    fn synth_paths_examples() {
        // sigma = 0, eta = 0, r_1 = r_2 = c: constant
        let params = LemmaParams {
            sigma: 0.0,
            eta0: 0.0,
            r_init: 3.0,
            momentum: MomentumSchedule::constant(0.5).unwrap(),
            ..LemmaParams::defaults(LemmaId::Lemma2)
        };
        let paths = synth_paths(LemmaId::Lemma2, params, 1, 3, 50).unwrap();
        assert!(paths.iter().all(|p| p.series.r.iter().all(|r| *r == 3.0)));

        let params = LemmaParams {
            momentum: MomentumSchedule::constant(0.5).unwrap(),
            ..LemmaParams::defaults(LemmaId::LemmaCouple)
        };
        let paths = synth_paths(LemmaId::LemmaCouple, params, 3, 200, 2000).unwrap();
        assert_eq!(paths.len(), 200);
        let worst_tail = paths.iter().map(|p| p.series.z[1800..].iter().copied().fold(0.0, f64::max)).fold(0.0, f64::max);
        assert!(worst_tail < 1e-3, "{worst_tail}");
    }

    #[test]
    fn geometric_increments_closed_form() {
        // r_{n+2} = 1.5 r_{n+1} - 0.5 r_n from (0, 1): r_n = sum_{j<n-1} 0.5^j
        let thetas = vec![0.5; 30];
        let mut r = vec![0.0, 1.0];
        for n in 0..28 {
            let next = (1.0 + thetas[n]) * r[n + 1] - thetas[n] * r[n];
            r.push(next);
        }
        for (n, value) in r.iter().enumerate().skip(1) {
            let closed: f64 = (0..n).map(|j| 0.5f64.powi(j as i32)).sum();
            assert!((value - closed).abs() < 1e-12);
        }
        assert!((r[29] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn clamping_parameters_are_refused() {
        let params = LemmaParams { r_init: 1.0, ..LemmaParams::defaults(LemmaId::Lemma1) };
        assert!(matches!(
            SyntheticProcess::new(LemmaId::Lemma1, params, 2000),
            Err(DiagnosticsError::Config(_))
        ));
    }
}
