//! Momentum-accelerated stochastic methods.
//!
//! Every step first extrapolates from the two most recent iterates,
//! `x = (1 + theta_k) v_k - theta_k v_{k-1}`, then applies one sampled update
//! at `x`:
//!
//! * [`Method::Ssgd`]: projected stochastic subgradient step,
//! * [`Method::ProxRm`]: exact per-sample proximal point (Robbins–Monro),
//! * [`Method::Composite`]: a proximal/explicit pair on the lasso split.

use std::fmt;

use thiserror::Error;

use crate::problems::{soft_threshold, ConstraintSet, ProblemError, ProblemInstance, ProblemKind};
use crate::rng::{SaRng, RNG_ID};
use crate::schedules::{MomentumSchedule, StepSchedule, ValidityReport};
use crate::vecops::{all_finite, dist, sign0};

/// Geometric checkpoint ratio.
pub const DEFAULT_CHECKPOINT_RATIO: f64 = 1.1;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0} vs {1}")]
    Dimension(usize, usize),
    #[error("non-finite iterate at step {k}")]
    Divergence { k: usize },
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Ssgd,
    ProxRm,
    Composite,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ssgd => "ssgd",
            Self::ProxRm => "prox_rm",
            Self::Composite => "composite",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "ssgd" => Some(Self::Ssgd),
            "prox_rm" => Some(Self::ProxRm),
            "composite" => Some(Self::Composite),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Stage order of the composite method.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CompositeOrder {
    /// Proximal step on the sampled quadratic, then a subgradient step on the
    /// l1 term.
    ImplicitFirst,
    /// Gradient step on the sampled quadratic, then the exact l1 prox.
    ExplicitFirst,
}

impl CompositeOrder {
    pub fn name(&self) -> &'static str {
        match self {
            Self::ImplicitFirst => "implicit_first",
            Self::ExplicitFirst => "explicit_first",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "implicit_first" => Some(Self::ImplicitFirst),
            "explicit_first" => Some(Self::ExplicitFirst),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Init {
    /// `v_1 = v_2` drawn standard normal from the run stream.
    Normal,
    Zeros,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverConfig {
    pub method: Method,
    pub step: StepSchedule,
    pub momentum: MomentumSchedule,
    pub constraint: ConstraintSet,
    pub iterations: usize,
    pub seed: u64,
    pub checkpoint_ratio: f64,
    pub composite_order: CompositeOrder,
    pub init: Init,
}

impl SolverConfig {
    pub fn new(method: Method, step: StepSchedule, momentum: MomentumSchedule, iterations: usize, seed: u64) -> Self {
        Self {
            method,
            step,
            momentum,
            constraint: ConstraintSet::WholeSpace,
            iterations,
            seed,
            checkpoint_ratio: DEFAULT_CHECKPOINT_RATIO,
            composite_order: CompositeOrder::ExplicitFirst,
            init: Init::Normal,
        }
    }

    pub fn validate(&self, inst: &ProblemInstance) -> Result<(), SolverError> {
        if self.iterations < 2 {
            return Err(SolverError::Config(format!("need N >= 2, got {}", self.iterations)));
        }
        if !(self.checkpoint_ratio > 1.0) {
            return Err(SolverError::Config(format!("checkpoint ratio must be > 1, got {}", self.checkpoint_ratio)));
        }
        if let Some(d) = self.constraint.dim() {
            if d != inst.n {
                return Err(SolverError::Dimension(d, inst.n));
            }
        }
        if self.method == Method::Composite && !matches!(inst.kind, ProblemKind::Lasso { .. }) {
            return Err(SolverError::Config(format!("composite method needs a lasso instance, got {}", inst.kind)));
        }
        Ok(())
    }
}

/// `(1 + theta) v_curr - theta v_prev`
pub fn extrapolate(v_curr: &[f64], v_prev: &[f64], theta: f64) -> Result<Vec<f64>, SolverError> {
    if v_curr.len() != v_prev.len() {
        return Err(SolverError::Dimension(v_curr.len(), v_prev.len()));
    }
    let mut out = vec![0.0; v_curr.len()];
    extrapolate_into(&mut out, v_curr, v_prev, theta);
    Ok(out)
}

fn extrapolate_into(out: &mut [f64], v_curr: &[f64], v_prev: &[f64], theta: f64) {
    for ((o, c), p) in out.iter_mut().zip(v_curr).zip(v_prev) {
        *o = (1.0 + theta) * c - theta * p;
    }
}

/// The two most recent iterates plus the run's random stream.
#[derive(Clone, Debug)]
pub struct SolverState {
    v_prev: Vec<f64>,
    v_curr: Vec<f64>,
    /// Extrapolated point of the last step.
    x: Vec<f64>,
    work: Vec<f64>,
    /// Steps taken so far.
    pub k: usize,
    pub rng: SaRng,
}

impl SolverState {
    pub fn new(v_prev: Vec<f64>, v_curr: Vec<f64>, rng: SaRng) -> Result<Self, SolverError> {
        if v_prev.len() != v_curr.len() {
            return Err(SolverError::Dimension(v_prev.len(), v_curr.len()));
        }
        let n = v_curr.len();
        Ok(Self { v_prev, v_curr, x: vec![0.0; n], work: vec![0.0; n], k: 0, rng })
    }

    pub fn v_prev(&self) -> &[f64] {
        &self.v_prev
    }

    pub fn v_curr(&self) -> &[f64] {
        &self.v_curr
    }

    /// Extrapolated point used by the most recent step.
    pub fn extrapolated(&self) -> &[f64] {
        &self.x
    }

    fn check_dim(&self, inst: &ProblemInstance) -> Result<(), SolverError> {
        if self.v_curr.len() != inst.n {
            return Err(SolverError::Dimension(self.v_curr.len(), inst.n));
        }
        Ok(())
    }

    /// Extrapolates, samples an index, applies `update` to a copy of the
    /// extrapolated point and shifts the iterate pair.
    fn advance(
        &mut self,
        inst: &ProblemInstance,
        theta: f64,
        update: impl FnOnce(&mut [f64], usize),
    ) -> Result<(), SolverError> {
        self.check_dim(inst)?;
        extrapolate_into(&mut self.x, &self.v_curr, &self.v_prev, theta);
        let i = inst.sample_index(&mut self.rng);
        self.work.copy_from_slice(&self.x);
        update(&mut self.work, i);
        self.k += 1;
        if !all_finite(&self.work) {
            return Err(SolverError::Divergence { k: self.k });
        }
        std::mem::swap(&mut self.v_prev, &mut self.v_curr);
        std::mem::swap(&mut self.v_curr, &mut self.work);
        Ok(())
    }

    pub fn ssgd_step(
        &mut self,
        inst: &ProblemInstance,
        alpha: f64,
        theta: f64,
        constraint: &ConstraintSet,
    ) -> Result<(), SolverError> {
        check_alpha(alpha)?;
        self.advance(inst, theta, |v, i| {
            inst.subgrad_step(v, i, alpha);
            constraint.project_in_place(v);
        })
    }

    pub fn prox_rm_step(&mut self, inst: &ProblemInstance, alpha: f64, theta: f64) -> Result<(), SolverError> {
        check_alpha(alpha)?;
        self.advance(inst, theta, |v, i| inst.prox_step(v, i, alpha))
    }

    pub fn composite_step(
        &mut self,
        inst: &ProblemInstance,
        alpha: f64,
        theta: f64,
        order: CompositeOrder,
    ) -> Result<(), SolverError> {
        check_alpha(alpha)?;
        if !matches!(inst.kind, ProblemKind::Lasso { .. }) {
            return Err(SolverError::Config(format!("composite step needs a lasso instance, got {}", inst.kind)));
        }
        let weight = inst.sampled_l1_weight();
        self.advance(inst, theta, |v, i| match order {
            CompositeOrder::ImplicitFirst => {
                inst.prox_step(v, i, alpha);
                for vj in v.iter_mut() {
                    *vj -= alpha * weight * sign0(*vj);
                }
            }
            CompositeOrder::ExplicitFirst => {
                inst.subgrad_step(v, i, alpha);
                for vj in v.iter_mut() {
                    *vj = soft_threshold(*vj, alpha * weight);
                }
            }
        })
    }

    pub fn step(&mut self, config: &SolverConfig, inst: &ProblemInstance, alpha: f64, theta: f64) -> Result<(), SolverError> {
        match config.method {
            Method::Ssgd => self.ssgd_step(inst, alpha, theta, &config.constraint),
            Method::ProxRm => self.prox_rm_step(inst, alpha, theta),
            Method::Composite => self.composite_step(inst, alpha, theta, config.composite_order),
        }
    }
}

fn check_alpha(alpha: f64) -> Result<(), SolverError> {
    if alpha > 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(SolverError::Config(format!("step size must be > 0, got {alpha}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Checkpoint {
    /// Steps taken; the recorded iterate is the one produced by step `k`.
    pub k: usize,
    pub dist: f64,
    pub obj_gap: f64,
    pub increment: f64,
    pub alpha: f64,
    pub theta: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceMetadata {
    pub method: Method,
    pub step: StepSchedule,
    pub momentum: MomentumSchedule,
    pub constraint: String,
    pub composite_order: CompositeOrder,
    pub iterations: usize,
    pub seed: u64,
    pub rng: &'static str,
    pub step_validity: ValidityReport,
    pub momentum_nonincreasing: bool,
    /// Convergence results whose hypotheses this configuration meets.
    pub hypotheses: Vec<&'static str>,
    pub initial_dist: f64,
    pub diverged: bool,
    pub diverged_at: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SolverTrace {
    pub checkpoints: Vec<Checkpoint>,
    pub metadata: TraceMetadata,
}

impl SolverTrace {
    pub fn diverged(&self) -> bool {
        self.metadata.diverged
    }

    pub fn final_dist(&self) -> Option<f64> {
        self.checkpoints.last().map(|c| c.dist)
    }

    pub fn min_dist(&self) -> Option<f64> {
        self.checkpoints.iter().map(|c| c.dist).reduce(f64::min)
    }
}

/// `1, 2, ...` growing by `ratio` (at least by one), always ending at `n`.
pub fn checkpoint_indices(n: usize, ratio: f64) -> Vec<usize> {
    let mut out = Vec::new();
    let mut k = 1usize;
    while k < n {
        out.push(k);
        k = ((k as f64 * ratio).ceil() as usize).max(k + 1);
    }
    out.push(n);
    out
}

fn hypotheses(config: &SolverConfig, validity: &ValidityReport) -> Vec<&'static str> {
    let rm = validity.satisfies_robbins_monro();
    let bounds = config.momentum.bounds();
    let constant = config.momentum.constant_value().is_some_and(|t| t > 0.0);
    let bounded_below = bounds.lo > 0.0;
    let bounded_set = !matches!(config.constraint, ConstraintSet::WholeSpace);
    let mut out = Vec::new();
    match config.method {
        Method::Ssgd => {
            if rm && bounded_below && bounded_set {
                out.push("ssgd-bounded-iterates");
            }
            if rm && constant {
                out.push("ssgd-constant-momentum");
            }
        }
        Method::ProxRm => {
            if rm && config.momentum.is_nonincreasing() {
                out.push("prox-rm-nonincreasing-momentum");
            }
            if rm && constant {
                out.push("prox-rm-constant-momentum");
            }
        }
        Method::Composite => {
            if rm && config.momentum.is_nonincreasing() {
                out.push("composite-nonincreasing-momentum");
            }
        }
    }
    out
}

/// Runs `config.iterations` steps and records geometric checkpoints.
///
/// A non-finite iterate stops the run; the returned trace then carries the
/// checkpoints recorded so far and `diverged = true`.
pub fn run(config: &SolverConfig, inst: &ProblemInstance) -> Result<SolverTrace, SolverError> {
    config.validate(inst)?;
    let reference = inst
        .reference_optimum()
        .ok_or_else(|| SolverError::Config("instance has no reference optimum".into()))?
        .to_vec();
    let f_ref = inst.objective(&reference);

    let mut rng = SaRng::seed_from_u64(config.seed);
    let init = match config.init {
        Init::Normal => rng.normal_vec(inst.n),
        Init::Zeros => vec![0.0; inst.n],
    };
    let validity = config.step.classify();
    let mut metadata = TraceMetadata {
        method: config.method,
        step: config.step,
        momentum: config.momentum,
        constraint: describe_constraint(&config.constraint),
        composite_order: config.composite_order,
        iterations: config.iterations,
        seed: config.seed,
        rng: RNG_ID,
        hypotheses: hypotheses(config, &validity),
        step_validity: validity,
        momentum_nonincreasing: config.momentum.is_nonincreasing(),
        initial_dist: dist(&init, &reference),
        diverged: false,
        diverged_at: None,
    };

    let mut state = SolverState::new(init.clone(), init, rng)?;
    let stops = checkpoint_indices(config.iterations, config.checkpoint_ratio);
    let mut next_stop = stops.iter().peekable();
    let mut checkpoints = Vec::with_capacity(stops.len());
    for k in 1..=config.iterations {
        let alpha = config.step.eval(k);
        let theta = config.momentum.eval(k);
        match state.step(config, inst, alpha, theta) {
            Ok(()) => {}
            Err(SolverError::Divergence { k }) => {
                metadata.diverged = true;
                metadata.diverged_at = Some(k);
                break;
            }
            Err(e) => return Err(e),
        }
        if next_stop.peek() == Some(&&k) {
            next_stop.next();
            let record = Checkpoint {
                k,
                dist: dist(state.v_curr(), &reference),
                obj_gap: inst.objective(state.v_curr()) - f_ref,
                increment: dist(state.v_curr(), state.v_prev()),
                alpha,
                theta,
            };
            if ![record.dist, record.obj_gap, record.increment].iter().all(|x| x.is_finite()) {
                // iterate finite but too large to measure
                metadata.diverged = true;
                metadata.diverged_at = Some(k);
                break;
            }
            checkpoints.push(record);
        }
    }
    Ok(SolverTrace { checkpoints, metadata })
}

pub fn describe_constraint(c: &ConstraintSet) -> String {
    match c {
        ConstraintSet::WholeSpace => "whole".into(),
        ConstraintSet::Ball { center, radius } => {
            let origin = center.iter().all(|&x| x == 0.0);
            if origin {
                format!("ball {radius}")
            } else {
                format!("ball {radius} (center off origin)")
            }
        }
        ConstraintSet::Box { lo, hi } => {
            let uniform = lo.windows(2).all(|w| w[0] == w[1]) && hi.windows(2).all(|w| w[0] == w[1]);
            match (uniform, lo.first(), hi.first()) {
                (true, Some(l), Some(h)) => format!("box {l} {h}"),
                _ => "box (per-coordinate)".into(),
            }
        }
    }
}
