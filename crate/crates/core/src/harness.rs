//! Experiment configuration, presets and deterministic CSV bundles.
//!
//! Configs are flat `key = value` text with `#` comments. A `preset` key
//! expands to explicit keys first; any other key then overrides it.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use crate::diagnostics::{
    run_lemma, CheckReport, ConclusionTolerances, DiagnosticsError, EnsembleSettings, LemmaId, LemmaParams,
    NegativeControl, DEFAULT_TOL_Z,
};
use crate::momentum_algebra::{head_product, tail_coefficients, AlgebraError, DEFAULT_TAIL_TOL};
use crate::problems::{
    fmt_f64, gen, lasso_reference, ConstraintSet, ProblemError, ProblemInstance, ProblemKind, LASSO_REFERENCE_STEPS,
};
use crate::rng::RNG_ID;
use crate::schedules::{MomentumSchedule, ScheduleError, StepSchedule};
use crate::solvers::{run, CompositeOrder, Init, Method, SolverConfig, SolverError, SolverTrace};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DIVERGED: i32 = 3;

/// Floor written for `log10(0)`.
pub const LOG_FLOOR: f64 = -16.0;

pub const TRACE_HEADER: &str = "k,dist,obj_gap,increment,alpha,theta";
pub const SUMMARY_HEADER: &str = "seed,final_dist,min_dist,diverged";
pub const LEMMA_SUMMARY_HEADER: &str =
    "lemma_id,negative_control,paths,checks,violations,violation_rate,worst_z,converged_fraction,eta_plateau_fraction,secondary,passed,note";
pub const LEMMA_DETAIL_HEADER: &str = "lemma_id,path,step,V_n,estimate,z_score";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("missing required keys: {}", .0.join(", "))]
    MissingKeys(Vec<&'static str>),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty bundle: {0}")]
    EmptyBundle(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Diagnostics(#[from] DiagnosticsError),
    #[error(transparent)]
    Algebra(#[from] AlgebraError),
}

impl HarnessError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Solver(SolverError::Divergence { .. }) => EXIT_DIVERGED,
            _ => EXIT_CONFIG,
        }
    }

    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

/// Every key an experiment config may contain.
pub const EXPERIMENT_KEYS: &[&str] = &[
    "preset",
    "problem.kind",
    "problem.m",
    "problem.n",
    "problem.seed",
    "problem.lambda",
    "problem.load",
    "step.family",
    "step.c",
    "step.s",
    "step.p",
    "mom.family",
    "mom.theta",
    "mom.s",
    "mom.c",
    "mom.p",
    "sweep.theta",
    "method",
    "N",
    "seeds",
    "constraint",
    "composite_order",
    "init",
    "output",
];

/// Keys without a default when no preset is given.
pub const REQUIRED_KEYS: &[&str] = &["problem.kind", "problem.m", "problem.n", "step.c", "method"];

const DEFAULTS: &[(&str, &str)] = &[
    ("problem.seed", "10"),
    ("problem.lambda", "1"),
    ("step.family", "power"),
    ("step.s", "3"),
    ("step.p", "8/9"),
    ("mom.family", "constant"),
    ("mom.theta", "0.5"),
    ("N", "20000"),
    ("seeds", "1..5"),
    ("constraint", "none"),
    ("composite_order", "explicit_first"),
    ("init", "normal"),
];

pub const PRESETS: &[&str] = &["lsq-ssgd", "lsq-proxrm", "lad-ssgd", "lad-proxrm", "lasso"];

/// Explicit keys of a preset.
pub fn preset_keys(name: &str) -> Option<Vec<(&'static str, &'static str)>> {
    let (kind, m, n, c, method) = match name {
        "lsq-ssgd" => ("least_squares", "2000", "20", "1/16", "ssgd"),
        "lsq-proxrm" => ("least_squares", "2000", "20", "1/16", "prox_rm"),
        "lad-ssgd" => ("least_absolute", "10000", "100", "1/2", "ssgd"),
        "lad-proxrm" => ("least_absolute", "10000", "100", "1/4", "prox_rm"),
        "lasso" => ("lasso", "10000", "100", "1/20", "composite"),
        _ => return None,
    };
    let mut keys = vec![
        ("problem.kind", kind),
        ("problem.m", m),
        ("problem.n", n),
        ("step.c", c),
        ("method", method),
    ];
    keys.extend_from_slice(DEFAULTS);
    Some(keys)
}

/// Parses `a/b` fractions as well as plain floats.
fn parse_number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((a, b)) => {
            let (a, b): (f64, f64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (b != 0.0).then(|| a / b)
        }
        None => s.parse().ok(),
    }
}

/// `1,2,3` or the inclusive range `1..5`.
fn parse_seeds(s: &str) -> Option<Vec<u64>> {
    if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
        return (a <= b).then(|| (a..=b).collect());
    }
    s.split(',').map(|x| x.trim().parse().ok()).collect()
}

fn parse_constraint(s: &str, n: usize) -> Option<ConstraintSet> {
    let parts: Vec<&str> = s.split(':').collect();
    match parts.as_slice() {
        ["none"] | ["whole"] => Some(ConstraintSet::WholeSpace),
        ["ball", r] => ConstraintSet::ball(vec![0.0; n], parse_number(r)?).ok(),
        ["box", lo, hi] => ConstraintSet::uniform_box(n, parse_number(lo)?, parse_number(hi)?).ok(),
        _ => None,
    }
}

/// Raw `key = value` lines, keyed by name, remembering line numbers.
fn parse_lines(text: &str, allowed: &[&str]) -> Result<BTreeMap<String, (String, usize)>, HarnessError> {
    let mut map = BTreeMap::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| HarnessError::Line { line, msg: format!("expected 'key = value', got '{content}'") })?;
        let (key, value) = (key.trim(), value.trim());
        if !allowed.contains(&key) {
            return Err(HarnessError::Line { line, msg: format!("unknown key '{key}'") });
        }
        if value.is_empty() {
            return Err(HarnessError::Line { line, msg: format!("key '{key}' has no value") });
        }
        if map.insert(key.to_string(), (value.to_string(), line)).is_some() {
            return Err(HarnessError::Line { line, msg: format!("duplicate key '{key}'") });
        }
    }
    Ok(map)
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemSource {
    Generate { kind: ProblemKind, m: usize, n: usize, seed: u64 },
    Load(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub problem: ProblemSource,
    pub step: StepSchedule,
    pub momentum: MomentumSchedule,
    /// Constant momenta to sweep; empty for a single run.
    pub sweep_theta: Vec<f64>,
    pub method: Method,
    pub iterations: usize,
    pub seeds: Vec<u64>,
    pub constraint: String,
    pub composite_order: CompositeOrder,
    pub init: Init,
    pub output: Option<PathBuf>,
    /// Fully expanded keys, echoed into every CSV.
    pub expanded: BTreeMap<String, String>,
}

/// Parses and validates an experiment config.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, HarnessError> {
    let raw = parse_lines(text, EXPERIMENT_KEYS)?;
    let mut values: BTreeMap<String, (String, usize)> = BTreeMap::new();
    if let Some((preset, line)) = raw.get("preset") {
        let keys = preset_keys(preset).ok_or_else(|| HarnessError::Line {
            line: *line,
            msg: format!("unknown preset '{preset}' (known: {})", PRESETS.join(", ")),
        })?;
        for (k, v) in keys {
            values.insert(k.to_string(), (v.to_string(), *line));
        }
    } else {
        let missing: Vec<&str> = REQUIRED_KEYS.iter().copied().filter(|k| !raw.contains_key(*k)).collect();
        if !missing.is_empty() && !raw.contains_key("problem.load") {
            return Err(HarnessError::MissingKeys(missing));
        }
        for (k, v) in DEFAULTS {
            values.insert(k.to_string(), (v.to_string(), 0));
        }
    }
    values.extend(raw);
    build_config(values)
}

fn build_config(values: BTreeMap<String, (String, usize)>) -> Result<ExperimentConfig, HarnessError> {
    let get = |key: &'static str| values.get(key).map(|(v, l)| (v.as_str(), *l));
    let need = |key: &'static str| get(key).ok_or(HarnessError::MissingKeys(vec![key]));
    let bad = |line: usize, key: &str, value: &str, why: String| HarnessError::Line {
        line,
        msg: format!("{key} = {value}: {why}"),
    };
    let number = |key: &'static str| -> Result<f64, HarnessError> {
        let (v, l) = need(key)?;
        parse_number(v).ok_or_else(|| bad(l, key, v, "not a number".into()))
    };
    let count = |key: &'static str| -> Result<usize, HarnessError> {
        let (v, l) = need(key)?;
        let x = parse_number(v).ok_or_else(|| bad(l, key, v, "not a number".into()))?;
        if x < 1.0 || x.fract() != 0.0 || x > u32::MAX as f64 {
            return Err(bad(l, key, v, "must be a positive integer".into()));
        }
        Ok(x as usize)
    };
    let sched_err = |key: &'static str, e: ScheduleError| {
        let (v, l) = get(key).unwrap_or(("", 0));
        bad(l, key, v, e.to_string())
    };

    let problem = match get("problem.load") {
        Some((path, _)) => ProblemSource::Load(PathBuf::from(path)),
        None => {
            let (kind_name, l) = need("problem.kind")?;
            let lambda = number("problem.lambda")?;
            let kind = ProblemKind::from_name(kind_name, lambda).map_err(|e| bad(l, "problem.kind", kind_name, e.to_string()))?;
            let (seed, sl) = need("problem.seed")?;
            ProblemSource::Generate {
                kind,
                m: count("problem.m")?,
                n: count("problem.n")?,
                seed: seed.parse().map_err(|_| bad(sl, "problem.seed", seed, "not an integer".into()))?,
            }
        }
    };

    let (family, fl) = need("step.family")?;
    let step = match family {
        "constant" => StepSchedule::constant(number("step.c")?).map_err(|e| sched_err("step.c", e))?,
        "power" => StepSchedule::power(number("step.c")?, number("step.s")?, number("step.p")?)
            .map_err(|e| sched_err("step.c", e))?,
        other => return Err(bad(fl, "step.family", other, "expected constant or power".into())),
    };

    let (family, fl) = need("mom.family")?;
    let momentum = match family {
        "constant" => MomentumSchedule::constant(number("mom.theta")?).map_err(|e| sched_err("mom.theta", e))?,
        "harmonic" => MomentumSchedule::harmonic_offset(number("mom.s")?).map_err(|e| sched_err("mom.s", e))?,
        "power" => MomentumSchedule::power(number("mom.c")?, number("mom.s")?, number("mom.p")?)
            .map_err(|e| sched_err("mom.c", e))?,
        other => return Err(bad(fl, "mom.family", other, "expected constant, harmonic or power".into())),
    };

    let sweep_theta = match get("sweep.theta") {
        None => Vec::new(),
        Some((v, l)) => {
            let thetas: Option<Vec<f64>> = v.split(',').map(|x| parse_number(x.trim())).collect();
            let thetas = thetas.ok_or_else(|| bad(l, "sweep.theta", v, "expected a comma-separated list".into()))?;
            for t in &thetas {
                MomentumSchedule::constant(*t).map_err(|e| bad(l, "sweep.theta", v, e.to_string()))?;
            }
            thetas
        }
    };

    let (method_name, ml) = need("method")?;
    let method = Method::from_name(method_name)
        .ok_or_else(|| bad(ml, "method", method_name, "expected ssgd, prox_rm or composite".into()))?;
    let (seeds_text, sl) = need("seeds")?;
    let seeds = parse_seeds(seeds_text)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| bad(sl, "seeds", seeds_text, "expected '1,2,3' or '1..5'".into()))?;
    let (constraint, cl) = need("constraint")?;
    if parse_constraint(constraint, 1).is_none() {
        return Err(bad(cl, "constraint", constraint, "expected none, ball:R or box:LO:HI".into()));
    }
    let (order, ol) = need("composite_order")?;
    let composite_order = CompositeOrder::from_name(order)
        .ok_or_else(|| bad(ol, "composite_order", order, "expected explicit_first or implicit_first".into()))?;
    let (init_name, il) = need("init")?;
    let init = match init_name {
        "normal" => Init::Normal,
        "zeros" => Init::Zeros,
        other => return Err(bad(il, "init", other, "expected normal or zeros".into())),
    };

    Ok(ExperimentConfig {
        problem,
        step,
        momentum,
        sweep_theta,
        method,
        iterations: count("N")?,
        seeds,
        constraint: constraint.to_string(),
        composite_order,
        init,
        output: get("output").map(|(v, _)| PathBuf::from(v)),
        expanded: values.into_iter().map(|(k, (v, _))| (k, v)).collect(),
    })
}

impl ExperimentConfig {
    pub fn from_preset(name: &str) -> Result<Self, HarnessError> {
        parse_config(&format!("preset = {name}\n"))
    }

    /// Replaces the seed list, keeping the echo in sync.
    pub fn with_seeds(mut self, seeds: Vec<u64>) -> Self {
        let text = seeds.iter().map(u64::to_string).collect::<Vec<_>>().join(",");
        self.expanded.insert("seeds".into(), text);
        self.seeds = seeds;
        self
    }

    pub fn with_iterations(mut self, n: usize) -> Self {
        self.expanded.insert("N".into(), n.to_string());
        self.iterations = n;
        self
    }

    pub fn with_sweep(mut self, thetas: Vec<f64>) -> Self {
        let text = thetas.iter().map(f64::to_string).collect::<Vec<_>>().join(",");
        self.expanded.insert("sweep.theta".into(), text);
        self.sweep_theta = thetas;
        self
    }

    /// Builds (or loads) the instance; lasso instances get their long-run
    /// reference here.
    pub fn instance(&self) -> Result<ProblemInstance, HarnessError> {
        let mut inst = match &self.problem {
            ProblemSource::Generate { kind, m, n, seed } => gen(*kind, *m, *n, *seed)?,
            ProblemSource::Load(path) => {
                let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
                ProblemInstance::load(&text)?
            }
        };
        if inst.reference_optimum().is_none() {
            let x = lasso_reference(&inst, LASSO_REFERENCE_STEPS)?;
            inst.set_reference_optimum(x)?;
        }
        Ok(inst)
    }

    fn solver_config(&self, inst: &ProblemInstance, momentum: MomentumSchedule, seed: u64) -> Result<SolverConfig, HarnessError> {
        let mut c = SolverConfig::new(self.method, self.step, momentum, self.iterations, seed);
        c.constraint = parse_constraint(&self.constraint, inst.n)
            .ok_or_else(|| HarnessError::Config(format!("bad constraint '{}'", self.constraint)))?;
        c.composite_order = self.composite_order;
        c.init = self.init;
        c.validate(inst)?;
        Ok(c)
    }
}

/// One solver run inside a bundle.
#[derive(Clone, Debug, PartialEq)]
pub struct RunRecord {
    /// Swept momentum, if any.
    pub theta: Option<f64>,
    pub seed: u64,
    pub trace: SolverTrace,
}

impl RunRecord {
    pub fn final_dist(&self) -> f64 {
        if self.trace.diverged() {
            f64::INFINITY
        } else {
            self.trace.final_dist().unwrap_or(f64::NAN)
        }
    }

    /// Final distance over initial distance.
    pub fn ratio(&self) -> f64 {
        self.final_dist() / self.trace.metadata.initial_dist
    }
}

/// Output of an experiment: CSV files by name plus the runs behind them.
/// Wall time is kept out of the files so identical configs give identical
/// bytes.
#[derive(Clone, Debug)]
pub struct ResultBundle {
    pub files: BTreeMap<String, String>,
    pub runs: Vec<RunRecord>,
    pub wall_time: Duration,
}

impl ResultBundle {
    pub fn any_diverged(&self) -> bool {
        self.runs.iter().any(|r| r.trace.diverged())
    }

    /// Median of `ratio()` over seeds for one sweep value.
    pub fn median_ratio(&self, theta: Option<f64>) -> f64 {
        median(self.runs.iter().filter(|r| r.theta == theta).map(RunRecord::ratio).collect())
    }

    /// Exit status of a finished run: divergence only counts outside sweeps.
    pub fn exit_code(&self, sweep: bool) -> i32 {
        if !sweep && self.any_diverged() {
            EXIT_DIVERGED
        } else {
            EXIT_OK
        }
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, contents) in &self.files {
            let path = dir.join(name);
            fs::write(&path, contents).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }

    /// Reads the CSV files of a bundle directory back.
    pub fn read_files(dir: &Path) -> Result<BTreeMap<String, String>, HarnessError> {
        let mut files = BTreeMap::new();
        let entries = fs::read_dir(dir).map_err(|e| HarnessError::io(dir, e))?;
        for entry in entries {
            let path = entry.map_err(|e| HarnessError::io(dir, e))?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let text = fs::read_to_string(&path).map_err(|e| HarnessError::io(&path, e))?;
                let name = path.file_name().expect("file").to_string_lossy().into_owned();
                files.insert(name, text);
            }
        }
        Ok(files)
    }
}

/// Median of finite and infinite values; NaN when empty.
pub fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.sort_by(f64::total_cmp);
    let m = xs.len() / 2;
    if xs.len() % 2 == 1 {
        xs[m]
    } else {
        0.5 * (xs[m - 1] + xs[m])
    }
}

fn theta_label(theta: f64) -> String {
    format!("{theta}")
}

fn config_echo(out: &mut String, config: &ExperimentConfig) {
    for (k, v) in &config.expanded {
        let _ = writeln!(out, "# config.{k} = {v}");
    }
    let _ = writeln!(out, "# rng = {RNG_ID}");
}

fn trace_csv(config: &ExperimentConfig, run: &RunRecord) -> String {
    let meta = &run.trace.metadata;
    let mut out = String::new();
    config_echo(&mut out, config);
    let _ = writeln!(out, "# seed = {}", run.seed);
    if let Some(theta) = run.theta {
        let _ = writeln!(out, "# sweep.theta = {}", theta_label(theta));
    }
    let _ = writeln!(out, "# method = {}", meta.method.name());
    let _ = writeln!(out, "# step = {}", meta.step);
    let _ = writeln!(out, "# momentum = {}", meta.momentum);
    let _ = writeln!(out, "# constraint = {}", meta.constraint);
    let _ = writeln!(out, "# step_robbins_monro = {}", meta.step_validity.satisfies_robbins_monro());
    let _ = writeln!(out, "# momentum_nonincreasing = {}", meta.momentum_nonincreasing);
    let _ = writeln!(out, "# hypotheses = {}", meta.hypotheses.join(" "));
    let _ = writeln!(out, "# initial_dist = {}", fmt_f64(meta.initial_dist));
    let _ = writeln!(out, "# diverged = {}", meta.diverged);
    if let Some(k) = meta.diverged_at {
        let _ = writeln!(out, "# diverged_at = {k}");
    }
    out.push_str(TRACE_HEADER);
    out.push('\n');
    for c in &run.trace.checkpoints {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            c.k,
            fmt_f64(c.dist),
            fmt_f64(c.obj_gap),
            fmt_f64(c.increment),
            fmt_f64(c.alpha),
            fmt_f64(c.theta)
        );
    }
    out
}

fn summary_csv(config: &ExperimentConfig, theta: Option<f64>, runs: &[&RunRecord]) -> String {
    let mut out = String::new();
    config_echo(&mut out, config);
    if let Some(theta) = theta {
        let _ = writeln!(out, "# sweep.theta = {}", theta_label(theta));
    }
    let finals: Vec<f64> = runs.iter().map(|r| r.final_dist()).collect();
    let ratios: Vec<f64> = runs.iter().map(|r| r.ratio()).collect();
    let _ = writeln!(out, "# median_final_dist = {}", fmt_f64(median(finals)));
    let _ = writeln!(out, "# median_final_over_initial = {}", fmt_f64(median(ratios)));
    out.push_str(SUMMARY_HEADER);
    out.push('\n');
    for r in runs {
        let min = r.trace.min_dist().unwrap_or(f64::NAN);
        let _ = writeln!(out, "{},{},{},{}", r.seed, fmt_f64(r.final_dist()), fmt_f64(min), r.trace.diverged());
    }
    out
}

/// Runs every (sweep value, seed) pair, in parallel, and renders the bundle.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultBundle, HarnessError> {
    let start = Instant::now();
    let inst = config.instance()?;
    run_experiment_on(config, &inst).map(|mut b| {
        b.wall_time = start.elapsed();
        b
    })
}

/// As [`run_experiment`] on a prepared instance.
pub fn run_experiment_on(config: &ExperimentConfig, inst: &ProblemInstance) -> Result<ResultBundle, HarnessError> {
    let start = Instant::now();
    let sweep: Vec<Option<f64>> = if config.sweep_theta.is_empty() {
        vec![None]
    } else {
        config.sweep_theta.iter().copied().map(Some).collect()
    };
    let jobs: Vec<(Option<f64>, u64)> =
        sweep.iter().flat_map(|t| config.seeds.iter().map(move |s| (*t, *s))).collect();
    let runs: Vec<RunRecord> = jobs
        .par_iter()
        .map(|&(theta, seed)| {
            let momentum = match theta {
                Some(t) => MomentumSchedule::constant(t).map_err(|e| HarnessError::Config(e.to_string()))?,
                None => config.momentum,
            };
            let sc = config.solver_config(inst, momentum, seed)?;
            Ok(RunRecord { theta, seed, trace: run(&sc, inst)? })
        })
        .collect::<Result<_, HarnessError>>()?;

    let mut files = BTreeMap::new();
    for theta in &sweep {
        let prefix = match theta {
            Some(t) => format!("theta{}_", theta_label(*t)),
            None => String::new(),
        };
        let group: Vec<&RunRecord> = runs.iter().filter(|r| r.theta == *theta).collect();
        for r in &group {
            files.insert(format!("{prefix}trace_seed{}.csv", r.seed), trace_csv(config, r));
        }
        files.insert(format!("{prefix}summary.csv"), summary_csv(config, *theta, &group));
    }
    Ok(ResultBundle { files, runs, wall_time: start.elapsed() })
}

/// A trace CSV read back: sweep value (if any) and `(k, dist)` rows.
type ParsedTrace = (Option<String>, Vec<(usize, f64)>);

/// Distances by checkpoint, one list entry per seed.
type SeedColumns = BTreeMap<usize, Vec<f64>>;

fn parse_trace(name: &str, text: &str) -> Result<ParsedTrace, HarnessError> {
    let mut theta = None;
    let mut rows = Vec::new();
    let mut seen_header = false;
    for (idx, line) in text.lines().enumerate() {
        if let Some(meta) = line.strip_prefix("# ") {
            if let Some(v) = meta.strip_prefix("sweep.theta = ") {
                theta = Some(v.to_string());
            }
            continue;
        }
        if !seen_header {
            if line != TRACE_HEADER {
                return Err(HarnessError::Config(format!("{name}: line {}: expected trace header", idx + 1)));
            }
            seen_header = true;
            continue;
        }
        let mut fields = line.split(',');
        let parse_err = || HarnessError::Config(format!("{name}: line {}: malformed row", idx + 1));
        let k = fields.next().and_then(|k| k.parse().ok()).ok_or_else(parse_err)?;
        let d = fields.next().and_then(|d| d.parse().ok()).ok_or_else(parse_err)?;
        rows.push((k, d));
    }
    Ok((theta, rows))
}

fn log10_floor(x: f64) -> f64 {
    if x > 0.0 {
        x.log10()
    } else if x == 0.0 {
        LOG_FLOOR
    } else {
        f64::NAN
    }
}

/// `log10 k` against `log10 dist`, one column per sweep value, medians over
/// seeds. Zero distances are written as [`LOG_FLOOR`].
pub fn plotdata(files: &BTreeMap<String, String>) -> Result<String, HarnessError> {
    // group -> k -> dists over seeds
    let mut groups: BTreeMap<Option<String>, SeedColumns> = BTreeMap::new();
    for (name, text) in files {
        if !name.contains("trace_seed") {
            continue;
        }
        let (theta, rows) = parse_trace(name, text)?;
        let group = groups.entry(theta).or_default();
        for (k, d) in rows {
            group.entry(k).or_default().push(d);
        }
    }
    if groups.is_empty() {
        return Err(HarnessError::EmptyBundle("no trace files".into()));
    }
    let mut ordered: Vec<(Option<String>, SeedColumns)> = groups.into_iter().collect();
    ordered.sort_by(|a, b| {
        let key = |g: &Option<String>| g.as_deref().and_then(|s| s.parse::<f64>().ok()).unwrap_or(f64::NEG_INFINITY);
        key(&a.0).total_cmp(&key(&b.0))
    });
    let mut ks: Vec<usize> = ordered.iter().flat_map(|(_, g)| g.keys().copied()).collect();
    ks.sort_unstable();
    ks.dedup();

    let mut out = String::from("log10_k");
    for (theta, _) in &ordered {
        match theta {
            Some(t) => {
                let _ = write!(out, ",log10_dist_theta={t}");
            }
            None => out.push_str(",log10_dist"),
        }
    }
    out.push('\n');
    for k in ks {
        let _ = write!(out, "{}", fmt_f64((k as f64).log10()));
        for (_, g) in &ordered {
            let value = g.get(&k).map_or(f64::NAN, |d| log10_floor(median(d.clone())));
            let _ = write!(out, ",{}", fmt_f64(value));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Every key a lemma-suite config may contain.
pub const LEMMA_KEYS: &[&str] = &["lemmas", "paths", "length", "branches", "seed", "tol_z", "negative_control"];

#[derive(Clone, Debug, PartialEq)]
pub struct LemmaSuiteConfig {
    pub lemmas: Vec<LemmaId>,
    pub paths: usize,
    pub length: usize,
    pub branches: usize,
    pub seed: u64,
    pub tol_z: f64,
    pub negative_control: Option<NegativeControl>,
}

impl Default for LemmaSuiteConfig {
    fn default() -> Self {
        Self {
            lemmas: LemmaId::ALL.to_vec(),
            paths: 200,
            length: 2000,
            branches: 200,
            seed: 1,
            tol_z: DEFAULT_TOL_Z,
            negative_control: None,
        }
    }
}

impl LemmaSuiteConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let raw = parse_lines(text, LEMMA_KEYS)?;
        let mut c = Self::default();
        for (key, (value, line)) in raw {
            let bad = |why: &str| HarnessError::Line { line, msg: format!("{key} = {value}: {why}") };
            let int = || value.parse::<usize>().map_err(|_| bad("not a nonnegative integer"));
            match key.as_str() {
                "lemmas" => {
                    c.lemmas = if value == "all" {
                        LemmaId::ALL.to_vec()
                    } else {
                        value
                            .split(',')
                            .map(|s| LemmaId::from_name(s.trim()).ok_or_else(|| bad(&format!("unknown lemma id '{}'", s.trim()))))
                            .collect::<Result<_, _>>()?
                    }
                }
                "paths" => c.paths = int()?,
                "length" => c.length = int()?,
                "branches" => c.branches = int()?,
                "seed" => c.seed = value.parse().map_err(|_| bad("not an integer"))?,
                "tol_z" => c.tol_z = parse_number(&value).filter(|z| *z > 0.0).ok_or_else(|| bad("must be positive"))?,
                "negative_control" => c.negative_control = parse_control(&value).ok_or_else(|| bad("expected none, drift:D or theta:T"))?,
                _ => unreachable!("key list checked"),
            }
        }
        Ok(c)
    }
}

fn parse_control(s: &str) -> Option<Option<NegativeControl>> {
    match s.split_once(':') {
        None if s == "none" => Some(None),
        Some(("drift", d)) => parse_number(d).map(|d| Some(NegativeControl::Drift(d))),
        Some(("theta", t)) => parse_number(t).map(|t| Some(NegativeControl::Momentum(t))),
        _ => None,
    }
}

#[derive(Clone, Debug)]
pub struct LemmaSuiteResult {
    pub reports: Vec<CheckReport>,
    pub summary_csv: String,
    pub detail_csv: String,
}

impl LemmaSuiteResult {
    pub fn all_passed(&self) -> bool {
        self.reports.iter().all(|r| r.passed)
    }

    pub fn exit_code(&self) -> i32 {
        if self.all_passed() {
            EXIT_OK
        } else {
            EXIT_CHECK_FAILED
        }
    }

    /// One line per lemma.
    pub fn summary_lines(&self) -> Vec<String> {
        self.reports.iter().map(summary_line).collect()
    }

    pub fn write_to(&self, dir: &Path) -> Result<(), HarnessError> {
        fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
        for (name, text) in [("lemma_summary.csv", &self.summary_csv), ("lemma_detail.csv", &self.detail_csv)] {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| HarnessError::io(&path, e))?;
        }
        Ok(())
    }
}

pub fn summary_line(r: &CheckReport) -> String {
    let control = r.negative_control.as_ref().map(|c| format!(" [{c}]")).unwrap_or_default();
    format!(
        "{}{} {} violations={}/{} worst_z={:.2} converged={:.3}{} {}",
        r.lemma_id,
        control,
        if r.passed { "PASS" } else { "FAIL" },
        r.supermartingale_violations,
        r.checks,
        r.worst_z,
        r.converged_fraction,
        r.eta_plateau_fraction.map(|f| format!(" eta_plateau={f:.3}")).unwrap_or_default(),
        r.note
    )
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Runs the requested lemma pipelines.
pub fn run_lemma_suite(config: &LemmaSuiteConfig) -> Result<LemmaSuiteResult, HarnessError> {
    if config.paths == 0 {
        return Err(DiagnosticsError::Argument("P = 0 paths".into()).into());
    }
    if config.lemmas.is_empty() {
        return Err(HarnessError::Config("no lemmas requested".into()));
    }
    let mut settings = EnsembleSettings::new(config.paths, config.length, config.branches, config.seed);
    settings.tol_z = config.tol_z;
    let mut reports = Vec::with_capacity(config.lemmas.len());
    for id in &config.lemmas {
        let params = LemmaParams { control: config.negative_control, ..LemmaParams::defaults(*id) };
        reports.push(run_lemma(*id, params, &settings, ConclusionTolerances::default())?);
    }

    let mut summary = String::new();
    let _ = writeln!(summary, "# paths = {}", config.paths);
    let _ = writeln!(summary, "# length = {}", config.length);
    let _ = writeln!(summary, "# branches = {}", config.branches);
    let _ = writeln!(summary, "# seed = {}", config.seed);
    let _ = writeln!(summary, "# tol_z = {}", config.tol_z);
    let _ = writeln!(summary, "# rng = {RNG_ID}");
    summary.push_str(LEMMA_SUMMARY_HEADER);
    summary.push('\n');
    let mut detail = String::from(LEMMA_DETAIL_HEADER);
    detail.push('\n');
    for r in &reports {
        let opt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        let secondary = r.secondary.as_ref().map(|(n, f)| format!("{n}={f}")).unwrap_or_default();
        let _ = writeln!(
            summary,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.lemma_id,
            r.negative_control.as_deref().unwrap_or("none"),
            r.paths_tested,
            r.checks,
            r.supermartingale_violations,
            fmt_f64(r.violation_rate()),
            fmt_f64(r.worst_z),
            fmt_f64(r.converged_fraction),
            opt(r.eta_plateau_fraction),
            secondary,
            r.passed,
            csv_field(&r.note)
        );
        for c in &r.details {
            let _ = writeln!(
                detail,
                "{},{},{},{},{},{}",
                r.lemma_id,
                c.path,
                c.step,
                fmt_f64(c.v_n),
                fmt_f64(c.estimate),
                fmt_f64(c.z_score)
            );
        }
    }
    Ok(LemmaSuiteResult { reports, summary_csv: summary, detail_csv: detail })
}

/// Human-readable products and tail coefficients of a momentum schedule.
pub fn algebra_report(schedule: &MomentumSchedule, n: usize) -> Result<String, HarnessError> {
    let thetas: Vec<f64> = (1..=n).map(|k| schedule.momentum_at(k)).collect::<Result<_, ScheduleError>>()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let p = head_product(&thetas, n)?;
    let t = tail_coefficients(schedule, n, DEFAULT_TAIL_TOL)?;
    let mut out = String::new();
    let _ = writeln!(out, "schedule = {schedule}");
    let _ = writeln!(out, "truncation horizon = {}", t.horizon);
    let e = p.entries;
    let _ = writeln!(out, "P_{n} = [[{:.12}, {:.12}], [{:.12}, {:.12}]]", e[0][0], e[0][1], e[1][0], e[1][1]);
    out.push_str("n,theta_n,t_n\n");
    for k in 1..=n {
        let _ = writeln!(out, "{k},{},{}", fmt_f64(thetas[k - 1]), fmt_f64(t.get(k).expect("in range")));
    }
    let _ = writeln!(out, "max recursion residual = {:.3e}", t.max_recursion_residual());
    Ok(out)
}

/// Parses `constant:T`, `harmonic:S` or `power:C:S:P`.
pub fn parse_momentum_spec(s: &str) -> Result<MomentumSchedule, HarnessError> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |x: &str| parse_number(x).ok_or_else(|| HarnessError::Config(format!("'{x}' is not a number")));
    let sched = match parts.as_slice() {
        ["constant", t] => MomentumSchedule::constant(num(t)?),
        ["harmonic", s] => MomentumSchedule::harmonic_offset(num(s)?),
        ["power", c, s, p] => MomentumSchedule::power(num(c)?, num(s)?, num(p)?),
        _ => return Err(HarnessError::Config(format!("bad momentum spec '{s}'"))),
    };
    sched.map_err(|e| HarnessError::Config(e.to_string()))
}
