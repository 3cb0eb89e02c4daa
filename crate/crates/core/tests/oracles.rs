//! Closed-form operators against brute-force references.

use nesterov_sa::problems::{gen, prox_l1, ProblemInstance, ProblemKind};
use nesterov_sa::schedules::{MomentumSchedule, StepSchedule};
use nesterov_sa::solvers::{run, Init, Method, SolverConfig, SolverState};
use nesterov_sa::SaRng;

mod common;
use common::{dot, prox_by_search, ternary_search};

#[test]
fn prox_sample_matches_search() {
    for kind in [ProblemKind::LeastSquares, ProblemKind::LeastAbsolute] {
        let inst = gen(kind, 50, 4, 3).unwrap();
        let mut rng = SaRng::seed_from_u64(11);
        for _ in 0..1000 {
            let x: Vec<f64> = (0..4).map(|_| 3.0 * rng.normal()).collect();
            let i = rng.index(50);
            let alpha = 10f64.powf(-3.0 + 3.0 * rng.uniform());
            let closed = inst.prox_sample(&x, i, alpha).unwrap();
            let searched = prox_by_search(&inst, &x, i, alpha);
            for (c, s) in closed.iter().zip(&searched) {
                assert!((c - s).abs() < 1e-6, "{kind:?}: {closed:?} vs {searched:?}");
            }
        }
    }
}

#[test]
fn prox_l1_matches_search() {
    let mut rng = SaRng::seed_from_u64(12);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..3).map(|_| 2.0 * rng.normal()).collect();
        let tau = 2.0 * rng.uniform();
        let closed = prox_l1(&x, tau);
        for (xj, cj) in x.iter().zip(&closed) {
            let s = ternary_search(|v| tau * v.abs() + 0.5 * (v - xj) * (v - xj), -20.0, 20.0);
            assert!((cj - s).abs() < 1e-6);
        }
    }
}

#[test]
fn subgradient_inequality() {
    for kind in [ProblemKind::LeastSquares, ProblemKind::LeastAbsolute, ProblemKind::Lasso { lambda: 1.0 }] {
        let inst = gen(kind, 40, 5, 7).unwrap();
        let mut rng = SaRng::seed_from_u64(13);
        for _ in 0..1000 {
            let x = rng.normal_vec(5);
            let y: Vec<f64> = rng.normal_vec(5).iter().map(|v| 4.0 * v).collect();
            let i = rng.index(40);
            let o = inst.subgrad(&x, i).unwrap();
            let diff: Vec<f64> = y.iter().zip(&x).map(|(a, b)| a - b).collect();
            let lower = o.value + dot(&o.subgradient, &diff);
            let fy = inst.sample_value(&y, i);
            assert!(fy >= lower - 1e-9 * (1.0 + fy.abs()), "{kind:?}: {fy} < {lower}");
        }
    }
}

#[test]
fn zero_momentum_matches_plain_sgd() {
    let inst = gen(ProblemKind::LeastSquares, 300, 6, 4).unwrap();
    let step = StepSchedule::power(1.0 / 16.0, 3.0, 8.0 / 9.0).unwrap();
    let mut config = SolverConfig::new(Method::Ssgd, step, MomentumSchedule::constant(0.0).unwrap(), 500, 9);
    config.init = Init::Normal;

    // plain SGD with the solver's draw order: init first, then one index per step
    let mut rng = SaRng::seed_from_u64(9);
    let mut v = rng.normal_vec(6);
    let mut state = SolverState::new(v.clone(), v.clone(), SaRng::seed_from_u64(9)).unwrap();
    state.rng.normal_vec(6);
    for k in 1..=500 {
        let alpha = step.step_at(k).unwrap();
        let i = rng.index(300);
        let g = inst.subgrad(&v, i).unwrap().subgradient;
        for (vj, gj) in v.iter_mut().zip(&g) {
            *vj -= alpha * gj;
        }
        state.step(&config, &inst, alpha, 0.0).unwrap();
        for (a, b) in v.iter().zip(state.v_curr()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }

    let trace = run(&config, &inst).unwrap();
    let last = trace.checkpoints.last().unwrap();
    let x_star = inst.reference_optimum().unwrap();
    let d = v.iter().zip(x_star).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    assert!((last.dist - d).abs() < 1e-12);
}

#[test]
fn single_row_is_deterministic_heavy_ball() {
    // with one sample the stochastic method is the deterministic momentum
    // method on that row
    let a = vec![1.0, -2.0, 0.5];
    let inst = ProblemInstance::from_parts(ProblemKind::LeastSquares, 3, a.clone(), vec![1.0], None, 0).unwrap();
    let step = StepSchedule::constant(0.05).unwrap();
    let theta = 0.6;
    let config = SolverConfig::new(Method::Ssgd, step, MomentumSchedule::constant(theta).unwrap(), 200, 1);
    let start = vec![0.3, 0.1, -0.2];
    let mut state = SolverState::new(start.clone(), start.clone(), SaRng::seed_from_u64(1)).unwrap();
    let (mut prev, mut curr) = (start.clone(), start);
    for _ in 0..200 {
        let x: Vec<f64> = curr.iter().zip(&prev).map(|(c, p)| (1.0 + theta) * c - theta * p).collect();
        let r = dot(&a, &x) - 1.0;
        let next: Vec<f64> = x.iter().zip(&a).map(|(xj, aj)| xj - 0.05 * 2.0 * r * aj).collect();
        prev = std::mem::replace(&mut curr, next);
        state.step(&config, &inst, 0.05, theta).unwrap();
        for (u, w) in curr.iter().zip(state.v_curr()) {
            assert!((u - w).abs() < 1e-14);
        }
    }
    assert!((dot(&a, &curr) - 1.0).abs() < 1e-10);
}
