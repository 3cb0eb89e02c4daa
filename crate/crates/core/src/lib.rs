//! Stochastic approximation with Nesterov momentum.
//!
//! * [`momentum_algebra`]: companion matrices, head/tail products, tail coefficients.
//! * [`schedules`]: step-size and momentum sequences.
//! * [`problems`]: synthetic least-squares, least-absolute and lasso instances.
//! * [`solvers`]: momentum variants of the stochastic subgradient, proximal
//!   Robbins–Monro and composite methods.
//! * [`diagnostics`]: delayed-supermartingale Lyapunov series and Monte Carlo checks.
//! * [`harness`]: configs, presets, CSV bundles and the lemma suite.

// `!(x > 0.0)` is used on purpose so NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod diagnostics;
pub mod harness;
pub mod momentum_algebra;
pub mod problems;
pub mod rng;
pub mod schedules;
pub mod solvers;
mod vecops;

pub use rng::SaRng;
