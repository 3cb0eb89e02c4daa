use proptest::prelude::*;

use nesterov_sa::momentum_algebra::{companion_matrix, mat_mul, tail_coefficients};
use nesterov_sa::problems::{gen, project, ConstraintSet, ProblemKind};
use nesterov_sa::schedules::{MomentumSchedule, StepSchedule};
use nesterov_sa::solvers::SolverState;
use nesterov_sa::SaRng;

fn vec_strategy(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, n)
}

fn momentum_strategy() -> impl Strategy<Value = MomentumSchedule> {
    prop_oneof![
        (0.0f64..0.95).prop_map(|t| MomentumSchedule::constant(t).unwrap()),
        (0.5f64..5.0).prop_map(|s| MomentumSchedule::harmonic_offset(s).unwrap()),
        (0.05f64..0.9, 0.5f64..4.0, 0.05f64..1.5).prop_map(|(c, s, p)| MomentumSchedule::power(c, s, p).unwrap()),
    ]
}

fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn prox_is_nonexpansive(x in vec_strategy(4), y in vec_strategy(4), i in 0usize..30, alpha in 1e-3f64..5.0, lad in any::<bool>()) {
        let kind = if lad { ProblemKind::LeastAbsolute } else { ProblemKind::LeastSquares };
        let inst = gen(kind, 30, 4, 21).unwrap();
        let px = inst.prox_sample(&x, i, alpha).unwrap();
        let py = inst.prox_sample(&y, i, alpha).unwrap();
        prop_assert!(norm(&sub(&px, &py)) <= norm(&sub(&x, &y)) * (1.0 + 1e-12) + 1e-12);
    }

    #[test]
    fn least_squares_prox_is_stationary(x in vec_strategy(4), i in 0usize..30, alpha in 1e-3f64..5.0) {
        let inst = gen(ProblemKind::LeastSquares, 30, 4, 22).unwrap();
        let v = inst.prox_sample(&x, i, alpha).unwrap();
        let g = inst.subgrad(&v, i).unwrap().subgradient;
        for j in 0..4 {
            let residual = g[j] + (v[j] - x[j]) / alpha;
            prop_assert!(residual.abs() < 1e-8 * (1.0 + g[j].abs() + x[j].abs() / alpha));
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(x in vec_strategy(3), c in vec_strategy(3), r in 0.0f64..5.0, lo in -5.0f64..0.0, w in 0.0f64..5.0) {
        for set in [ConstraintSet::ball(c.clone(), r).unwrap(), ConstraintSet::uniform_box(3, lo, lo + w).unwrap()] {
            let p = project(&x, &set);
            prop_assert!(set.contains(&p, 1e-12));
            let pp = project(&p, &set);
            prop_assert!(norm(&sub(&p, &pp)) <= 1e-12 * (1.0 + norm(&p)));
        }
    }

    #[test]
    fn tail_chain_identity(sched in momentum_strategy(), n in 1usize..150) {
        // Q_n = M_n Q_{n+1}
        let t = tail_coefficients(&sched, n + 1, 1e-13).unwrap();
        let m = companion_matrix(t.theta(n).unwrap()).unwrap();
        let lhs = t.tail_product(n).unwrap().entries;
        let rhs = mat_mul(m.entries(), &t.tail_product(n + 1).unwrap().entries);
        for r in 0..2 {
            for c in 0..2 {
                prop_assert!((lhs[r][c] - rhs[r][c]).abs() <= 1e-12 * (1.0 + lhs[r][c].abs()));
            }
        }
    }

    #[test]
    fn tails_are_monotone_and_bounded(sched in momentum_strategy()) {
        let t = tail_coefficients(&sched, 200, 1e-13).unwrap();
        let b = sched.bounds();
        let vals = t.values();
        for w in vals.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
        }
        for v in vals {
            prop_assert!(*v >= b.lo / (1.0 - b.lo) * (1.0 - 1e-12) - 1e-15);
            prop_assert!(*v <= b.hi / (1.0 - b.hi) * (1.0 + 1e-12) + 1e-15);
        }
    }

    #[test]
    fn projected_iterates_stay_feasible(seed in 0u64..1000, radius in 0.1f64..3.0, theta in 0.0f64..0.95) {
        let inst = gen(ProblemKind::LeastAbsolute, 40, 5, 23).unwrap();
        let ball = ConstraintSet::ball(vec![0.0; 5], radius).unwrap();
        let step = StepSchedule::power(0.5, 3.0, 8.0 / 9.0).unwrap();
        let start = vec![0.0; 5];
        let mut state = SolverState::new(start.clone(), start, SaRng::seed_from_u64(seed)).unwrap();
        for k in 1..=200 {
            state.ssgd_step(&inst, step.step_at(k).unwrap(), theta, &ball).unwrap();
            prop_assert!(ball.contains(state.v_curr(), 1e-12));
        }
    }

    #[test]
    fn prox_rm_stays_bounded(seed in 0u64..1000, theta in 0.0f64..0.9, c in 0.01f64..0.5) {
        let inst = gen(ProblemKind::LeastSquares, 100, 10, 24).unwrap();
        let step = StepSchedule::power(c, 3.0, 8.0 / 9.0).unwrap();
        let start = vec![0.0; 10];
        let mut state = SolverState::new(start.clone(), start, SaRng::seed_from_u64(seed)).unwrap();
        for k in 1..=300 {
            state.prox_rm_step(&inst, step.step_at(k).unwrap(), theta).unwrap();
            prop_assert!(norm(state.v_curr()) < 1e3);
        }
    }
}

#[test]
fn prox_rm_preset_never_explodes() {
    let inst = gen(ProblemKind::LeastSquares, 2000, 20, 10).unwrap();
    let step = StepSchedule::power(1.0 / 16.0, 3.0, 8.0 / 9.0).unwrap();
    for theta in [0.0, 0.5, 0.9] {
        for seed in 1..=5 {
            let mut rng = SaRng::seed_from_u64(seed);
            let init = rng.normal_vec(20);
            let mut state = SolverState::new(init.clone(), init, rng).unwrap();
            let mut max_norm = 0.0f64;
            for k in 1..=20_000 {
                state.prox_rm_step(&inst, step.step_at(k).unwrap(), theta).unwrap();
                max_norm = max_norm.max(norm(state.v_curr()));
            }
            assert!(max_norm < 1e3, "theta {theta} seed {seed}: {max_norm}");
        }
    }
}
