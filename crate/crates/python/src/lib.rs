//! Python bindings for `nesterov_sa`.

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use nesterov_sa::diagnostics::{self, BetaFamily, ConclusionTolerances, EnsembleSettings, LemmaId, LemmaParams, PairSeries};
use nesterov_sa::harness::{self, LemmaSuiteConfig};
use nesterov_sa::momentum_algebra;
use nesterov_sa::problems::{self, ConstraintSet, ProblemInstance, ProblemKind};
use nesterov_sa::schedules;
use nesterov_sa::solvers::{self, CompositeOrder, Init, Method, SolverConfig};

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    PyValueError::new_err(e.to_string())
}

#[pyclass(name = "StepSchedule", frozen)]
struct StepSchedule(schedules::StepSchedule);

#[pymethods]
impl StepSchedule {
    #[staticmethod]
    fn constant(c: f64) -> PyResult<Self> {
        schedules::StepSchedule::constant(c).map(Self).map_err(err)
    }

    /// `c / (k + s)^p`
    #[staticmethod]
    fn power(c: f64, s: f64, p: f64) -> PyResult<Self> {
        schedules::StepSchedule::power(c, s, p).map(Self).map_err(err)
    }

    fn at(&self, k: usize) -> PyResult<f64> {
        self.0.step_at(k).map_err(err)
    }

    /// `(diverges_sum, square_summable)`
    fn classify(&self) -> (bool, bool) {
        let v = self.0.classify();
        (v.diverges_sum, v.square_summable)
    }

    fn __repr__(&self) -> String {
        format!("StepSchedule({})", self.0)
    }
}

#[pyclass(name = "MomentumSchedule", frozen)]
struct MomentumSchedule(schedules::MomentumSchedule);

#[pymethods]
impl MomentumSchedule {
    #[staticmethod]
    fn constant(theta: f64) -> PyResult<Self> {
        schedules::MomentumSchedule::constant(theta).map(Self).map_err(err)
    }

    /// `1 / (k + s)`
    #[staticmethod]
    fn harmonic(s: f64) -> PyResult<Self> {
        schedules::MomentumSchedule::harmonic_offset(s).map(Self).map_err(err)
    }

    /// `c / (k + s)^p`
    #[staticmethod]
    fn power(c: f64, s: f64, p: f64) -> PyResult<Self> {
        schedules::MomentumSchedule::power(c, s, p).map(Self).map_err(err)
    }

    fn at(&self, k: usize) -> PyResult<f64> {
        self.0.momentum_at(k).map_err(err)
    }

    /// Tail coefficients `t_1..t_n`.
    #[pyo3(signature = (n, tol = momentum_algebra::DEFAULT_TAIL_TOL))]
    fn tail_coefficients(&self, n: usize, tol: f64) -> PyResult<Vec<f64>> {
        momentum_algebra::tail_coefficients(&self.0, n, tol).map(|t| t.values().to_vec()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("MomentumSchedule({})", self.0)
    }
}

#[pyclass(name = "Problem", frozen)]
struct Problem(ProblemInstance);

#[pymethods]
impl Problem {
    /// `kind` is `least_squares`, `least_absolute` or `lasso`.
    #[staticmethod]
    #[pyo3(signature = (kind, m, n, seed, lam = 1.0))]
    fn generate(kind: &str, m: usize, n: usize, seed: u64, lam: f64) -> PyResult<Self> {
        let kind = ProblemKind::from_name(kind, lam).map_err(err)?;
        problems::gen(kind, m, n, seed).map(Self).map_err(err)
    }

    #[staticmethod]
    fn load(text: &str) -> PyResult<Self> {
        ProblemInstance::load(text).map(Self).map_err(err)
    }

    fn dump(&self) -> String {
        self.0.dump()
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.0.kind.name()
    }

    #[getter]
    fn m(&self) -> usize {
        self.0.m
    }

    #[getter]
    fn n(&self) -> usize {
        self.0.n
    }

    #[getter]
    fn reference_optimum(&self) -> Option<Vec<f64>> {
        self.0.reference_optimum().map(<[f64]>::to_vec)
    }

    /// Copy with the full-batch lasso reference attached.
    #[pyo3(signature = (steps = problems::LASSO_REFERENCE_STEPS))]
    fn with_lasso_reference(&self, steps: usize) -> PyResult<Self> {
        let x = problems::lasso_reference(&self.0, steps).map_err(err)?;
        let mut inst = self.0.clone();
        inst.set_reference_optimum(x).map_err(err)?;
        Ok(Self(inst))
    }

    fn row(&self, i: usize) -> PyResult<Vec<f64>> {
        if i >= self.0.m {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.0.row(i).to_vec())
    }

    fn objective(&self, x: Vec<f64>) -> PyResult<f64> {
        check_dim(&x, self.0.n)?;
        Ok(self.0.objective(&x))
    }

    /// `(F(x, i), subgradient)`
    fn subgrad(&self, x: Vec<f64>, i: usize) -> PyResult<(f64, Vec<f64>)> {
        let r = self.0.subgrad(&x, i).map_err(err)?;
        Ok((r.value, r.subgradient))
    }

    fn prox_sample(&self, x: Vec<f64>, i: usize, alpha: f64) -> PyResult<Vec<f64>> {
        self.0.prox_sample(&x, i, alpha).map_err(err)
    }
}

fn check_dim(x: &[f64], n: usize) -> PyResult<()> {
    if x.len() != n {
        return Err(PyValueError::new_err(format!("expected {n} coordinates, got {}", x.len())));
    }
    Ok(())
}

#[pyfunction]
fn prox_l1(x: Vec<f64>, tau: f64) -> Vec<f64> {
    problems::prox_l1(&x, tau)
}

#[pyfunction]
fn project_ball(x: Vec<f64>, center: Vec<f64>, radius: f64) -> PyResult<Vec<f64>> {
    check_dim(&x, center.len())?;
    let c = ConstraintSet::ball(center, radius).map_err(err)?;
    Ok(problems::project(&x, &c))
}

#[pyfunction]
fn project_box(x: Vec<f64>, lo: Vec<f64>, hi: Vec<f64>) -> PyResult<Vec<f64>> {
    check_dim(&x, lo.len())?;
    let c = ConstraintSet::boxed(lo, hi).map_err(err)?;
    Ok(problems::project(&x, &c))
}

#[pyfunction]
fn companion_matrix(theta: f64) -> PyResult<[[f64; 2]; 2]> {
    momentum_algebra::companion_matrix(theta).map(|m| *m.entries()).map_err(err)
}

/// `P_n = M_1 ... M_n`
#[pyfunction]
fn head_product(thetas: Vec<f64>, n: usize) -> PyResult<[[f64; 2]; 2]> {
    momentum_algebra::head_product(&thetas, n).map(|p| p.entries).map_err(err)
}

/// Runs a solver and returns the checkpoint columns and run metadata.
#[pyfunction]
#[pyo3(signature = (problem, method, step, momentum, iterations, seed, composite_order = "explicit_first", init = "normal"))]
#[allow(clippy::too_many_arguments)]
fn run_solver<'py>(
    py: Python<'py>,
    problem: &Problem,
    method: &str,
    step: &StepSchedule,
    momentum: &MomentumSchedule,
    iterations: usize,
    seed: u64,
    composite_order: &str,
    init: &str,
) -> PyResult<Bound<'py, PyDict>> {
    let method = Method::from_name(method).ok_or_else(|| PyValueError::new_err(format!("unknown method '{method}'")))?;
    let mut config = SolverConfig::new(method, step.0, momentum.0, iterations, seed);
    config.composite_order = CompositeOrder::from_name(composite_order)
        .ok_or_else(|| PyValueError::new_err(format!("unknown order '{composite_order}'")))?;
    config.init = match init {
        "normal" => Init::Normal,
        "zeros" => Init::Zeros,
        other => return Err(PyValueError::new_err(format!("unknown init '{other}'"))),
    };
    let trace = py.detach(|| solvers::run(&config, &problem.0)).map_err(err)?;
    let out = PyDict::new(py);
    let cps = &trace.checkpoints;
    out.set_item("k", cps.iter().map(|c| c.k).collect::<Vec<_>>())?;
    out.set_item("dist", cps.iter().map(|c| c.dist).collect::<Vec<_>>())?;
    out.set_item("obj_gap", cps.iter().map(|c| c.obj_gap).collect::<Vec<_>>())?;
    out.set_item("increment", cps.iter().map(|c| c.increment).collect::<Vec<_>>())?;
    out.set_item("alpha", cps.iter().map(|c| c.alpha).collect::<Vec<_>>())?;
    out.set_item("theta", cps.iter().map(|c| c.theta).collect::<Vec<_>>())?;
    out.set_item("initial_dist", trace.metadata.initial_dist)?;
    out.set_item("diverged", trace.metadata.diverged)?;
    out.set_item("hypotheses", trace.metadata.hypotheses.clone())?;
    Ok(out)
}

/// `V_n` for `n = 1..len(r)-1` from `r`, the momentum's tail coefficients
/// and a geometric `beta_k = beta_scale * beta_ratio^k`.
#[pyfunction]
#[pyo3(signature = (r, momentum, phi = (0.5, 0.5), beta_scale = 0.0, beta_ratio = 0.5))]
fn lyapunov(r: Vec<f64>, momentum: &MomentumSchedule, phi: (f64, f64), beta_scale: f64, beta_ratio: f64) -> PyResult<Vec<f64>> {
    let len = r.len();
    let series = PairSeries::new(r, vec![0.0; len], vec![0.0; len]).map_err(err)?;
    let t = momentum_algebra::tail_coefficients(&momentum.0, len.max(1), momentum_algebra::DEFAULT_TAIL_TOL).map_err(err)?;
    let beta = if beta_scale == 0.0 {
        BetaFamily::Zero
    } else {
        BetaFamily::Geometric { scale: beta_scale, ratio: beta_ratio }
    };
    diagnostics::lyapunov(&series, &t, phi, beta).map(|v| v.values).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (thetas, v_path, r0))]
fn relay(thetas: Vec<f64>, v_path: Vec<f64>, r0: f64) -> PyResult<Vec<f64>> {
    diagnostics::relay(&thetas, &v_path, r0).map_err(err)
}

/// Runs one lemma pipeline and returns the report fields.
#[pyfunction]
#[pyo3(signature = (lemma, paths = 200, length = 2000, branches = 200, seed = 1, negative_control = None))]
fn run_lemma<'py>(
    py: Python<'py>,
    lemma: &str,
    paths: usize,
    length: usize,
    branches: usize,
    seed: u64,
    negative_control: Option<&str>,
) -> PyResult<Bound<'py, PyDict>> {
    let id = LemmaId::from_name(lemma).ok_or_else(|| PyValueError::new_err(format!("unknown lemma '{lemma}'")))?;
    let mut text = format!("lemmas = {}\n", id.name());
    if let Some(c) = negative_control {
        text.push_str(&format!("negative_control = {c}\n"));
    }
    let suite = LemmaSuiteConfig::parse(&text).map_err(err)?;
    let params = LemmaParams { control: suite.negative_control, ..LemmaParams::defaults(id) };
    let settings = EnsembleSettings::new(paths, length, branches, seed);
    let report = py
        .detach(|| diagnostics::run_lemma(id, params, &settings, ConclusionTolerances::default()))
        .map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("lemma_id", &report.lemma_id)?;
    out.set_item("passed", report.passed)?;
    out.set_item("checks", report.checks)?;
    out.set_item("violations", report.supermartingale_violations)?;
    out.set_item("violation_rate", report.violation_rate())?;
    out.set_item("worst_z", report.worst_z)?;
    out.set_item("converged_fraction", report.converged_fraction)?;
    out.set_item("eta_plateau_fraction", report.eta_plateau_fraction)?;
    out.set_item("note", &report.note)?;
    Ok(out)
}

/// Runs an experiment config; returns `{"files": {...}, "median_ratio": ...}`.
#[pyfunction]
fn run_experiment<'py>(py: Python<'py>, config: &str) -> PyResult<Bound<'py, PyDict>> {
    let config = harness::parse_config(config).map_err(err)?;
    let bundle = py.detach(|| harness::run_experiment(&config)).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("files", bundle.files.clone())?;
    let ratios = PyDict::new(py);
    if config.sweep_theta.is_empty() {
        ratios.set_item("base", bundle.median_ratio(None))?;
    } else {
        for t in &config.sweep_theta {
            ratios.set_item(*t, bundle.median_ratio(Some(*t)))?;
        }
    }
    out.set_item("median_ratio", ratios)?;
    out.set_item("any_diverged", bundle.any_diverged())?;
    Ok(out)
}

#[pyfunction]
fn plotdata(files: std::collections::BTreeMap<String, String>) -> PyResult<String> {
    harness::plotdata(&files).map_err(err)
}

#[pymodule]
fn nesterov_sa_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<StepSchedule>()?;
    m.add_class::<MomentumSchedule>()?;
    m.add_class::<Problem>()?;
    m.add_function(wrap_pyfunction!(prox_l1, m)?)?;
    m.add_function(wrap_pyfunction!(project_ball, m)?)?;
    m.add_function(wrap_pyfunction!(project_box, m)?)?;
    m.add_function(wrap_pyfunction!(companion_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(head_product, m)?)?;
    m.add_function(wrap_pyfunction!(run_solver, m)?)?;
    m.add_function(wrap_pyfunction!(lyapunov, m)?)?;
    m.add_function(wrap_pyfunction!(relay, m)?)?;
    m.add_function(wrap_pyfunction!(run_lemma, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add_function(wrap_pyfunction!(plotdata, m)?)?;
    Ok(())
}
