//! Step-size and momentum sequences.
//!
//! Indices are 1-based: `step_at(1)` is the first step size.

use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScheduleError {
    #[error("schedule index must be >= 1, got {0}")]
    Index(usize),
    #[error("invalid schedule parameter: {0}")]
    Parameter(String),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSchedule {
    /// `alpha_k = c`
    Constant { c: f64 },
    /// `alpha_k = c / (k + s)^p`
    Power { c: f64, s: f64, p: f64 },
}

/// Analytic summability flags for a step schedule.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityReport {
    pub diverges_sum: bool,
    pub square_summable: bool,
    pub reason: String,
}

impl ValidityReport {
    pub fn satisfies_robbins_monro(&self) -> bool {
        self.diverges_sum && self.square_summable
    }
}

impl StepSchedule {
    pub fn constant(c: f64) -> Result<Self, ScheduleError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(ScheduleError::Parameter(format!("step constant must be > 0, got {c}")));
        }
        Ok(Self::Constant { c })
    }

    pub fn power(c: f64, s: f64, p: f64) -> Result<Self, ScheduleError> {
        if !(c.is_finite() && c > 0.0) {
            return Err(ScheduleError::Parameter(format!("step constant must be > 0, got {c}")));
        }
        if !(s.is_finite() && s >= 0.0) {
            return Err(ScheduleError::Parameter(format!("step offset must be >= 0, got {s}")));
        }
        if !(p.is_finite() && p >= 0.0) {
            return Err(ScheduleError::Parameter(format!("step exponent must be >= 0, got {p}")));
        }
        Ok(Self::Power { c, s, p })
    }

    pub fn step_at(&self, k: usize) -> Result<f64, ScheduleError> {
        if k < 1 {
            return Err(ScheduleError::Index(k));
        }
        Ok(self.eval(k))
    }

    /// Unchecked evaluation for hot loops; `k >= 1` is the caller's job.
    pub(crate) fn eval(&self, k: usize) -> f64 {
        match *self {
            Self::Constant { c } => c,
            Self::Power { c, s, p } => c / (k as f64 + s).powf(p),
        }
    }

    /// p-series test on the family parameters.
    pub fn classify(&self) -> ValidityReport {
        match *self {
            Self::Constant { .. } => ValidityReport {
                diverges_sum: true,
                square_summable: false,
                reason: "constant step: sum and sum of squares both diverge".into(),
            },
            Self::Power { p, .. } => {
                let diverges_sum = p <= 1.0;
                let square_summable = 2.0 * p > 1.0;
                let reason = match (diverges_sum, square_summable) {
                    (true, true) => format!("p = {p} in (1/2, 1]: sum diverges, squares summable"),
                    (true, false) => format!("p = {p} <= 1/2: squares not summable"),
                    (false, _) => format!("p = {p} > 1: sum converges, steps vanish too fast"),
                };
                ValidityReport { diverges_sum, square_summable, reason }
            }
        }
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { c } => write!(f, "constant(c={c})"),
            Self::Power { c, s, p } => write!(f, "power(c={c}, s={s}, p={p})"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum MomentumSchedule {
    /// `theta_k = theta`
    Constant { theta: f64 },
    /// `theta_k = 1 / (k + s)`
    HarmonicOffset { s: f64 },
    /// `theta_k = c / (k + s)^p`
    Power { c: f64, s: f64, p: f64 },
}

/// Closed interval containing every value of a momentum sequence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentumBounds {
    pub lo: f64,
    pub hi: f64,
}

impl MomentumSchedule {
    pub fn constant(theta: f64) -> Result<Self, ScheduleError> {
        let sched = Self::Constant { theta };
        sched.validate()?;
        Ok(sched)
    }

    pub fn harmonic_offset(s: f64) -> Result<Self, ScheduleError> {
        let sched = Self::HarmonicOffset { s };
        sched.validate()?;
        Ok(sched)
    }

    pub fn power(c: f64, s: f64, p: f64) -> Result<Self, ScheduleError> {
        let sched = Self::Power { c, s, p };
        sched.validate()?;
        Ok(sched)
    }

    fn validate(&self) -> Result<(), ScheduleError> {
        let finite = match *self {
            Self::Constant { theta } => theta.is_finite(),
            Self::HarmonicOffset { s } => s.is_finite(),
            Self::Power { c, s, p } => c.is_finite() && s.is_finite() && p.is_finite(),
        };
        if !finite {
            return Err(ScheduleError::Parameter("non-finite momentum parameter".into()));
        }
        match *self {
            Self::HarmonicOffset { s } if s <= 0.0 => {
                return Err(ScheduleError::Parameter(format!(
                    "harmonic offset must be > 0 so that theta_1 < 1, got {s}"
                )))
            }
            Self::Power { c, s, p } if c < 0.0 || s < 0.0 || p < 0.0 => {
                return Err(ScheduleError::Parameter("power momentum needs c, s, p >= 0".into()))
            }
            _ => {}
        }
        let b = self.bounds();
        if !(b.lo >= 0.0 && b.hi < 1.0) {
            return Err(ScheduleError::Parameter(format!(
                "momentum must lie in [0, 1), schedule spans [{}, {}]",
                b.lo, b.hi
            )));
        }
        Ok(())
    }

    pub fn momentum_at(&self, k: usize) -> Result<f64, ScheduleError> {
        if k < 1 {
            return Err(ScheduleError::Index(k));
        }
        Ok(self.eval(k))
    }

    pub(crate) fn eval(&self, k: usize) -> f64 {
        match *self {
            Self::Constant { theta } => theta,
            Self::HarmonicOffset { s } => 1.0 / (k as f64 + s),
            Self::Power { c, s, p } => c / (k as f64 + s).powf(p),
        }
    }

    /// Tight enclosing interval over `k >= 1` (the infimum of a decaying
    /// family is its limit 0).
    pub fn bounds(&self) -> MomentumBounds {
        match *self {
            Self::Constant { theta } => MomentumBounds { lo: theta, hi: theta },
            Self::HarmonicOffset { s } => MomentumBounds { lo: 0.0, hi: 1.0 / (1.0 + s) },
            Self::Power { c, s, p } => {
                let first = c / (1.0 + s).powf(p);
                if p == 0.0 || c == 0.0 {
                    MomentumBounds { lo: first, hi: first }
                } else {
                    MomentumBounds { lo: 0.0, hi: first }
                }
            }
        }
    }

    pub fn is_nonincreasing(&self) -> bool {
        // every supported family is constant or decays in k
        true
    }

    pub fn constant_value(&self) -> Option<f64> {
        match *self {
            Self::Constant { theta } => Some(theta),
            Self::Power { c, p, .. } if p == 0.0 || c == 0.0 => Some(self.eval(1)),
            _ => None,
        }
    }
}

impl fmt::Display for MomentumSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant { theta } => write!(f, "constant(theta={theta})"),
            Self::HarmonicOffset { s } => write!(f, "harmonic(s={s})"),
            Self::Power { c, s, p } => write!(f, "power(c={c}, s={s}, p={p})"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn step_examples() {
        let s = StepSchedule::power(1.0 / 16.0, 3.0, 8.0 / 9.0).unwrap();
        // 1/(16 * 4^(8/9)), evaluated independently as exp(-(8/9) ln 4) / 16
        let expected = (-(8.0f64 / 9.0) * 4f64.ln()).exp() / 16.0;
        assert!((s.step_at(1).unwrap() - expected).abs() < 1e-15);
        assert!((s.step_at(1).unwrap() - 0.018_227_016_243_376_82).abs() < 1e-15);

        let s = StepSchedule::power(0.5, 3.0, 8.0 / 9.0).unwrap();
        let expected = (-(8.0f64 / 9.0) * 4f64.ln()).exp() / 2.0;
        assert!((s.step_at(1).unwrap() - expected).abs() < 1e-15);
        assert!((s.step_at(1).unwrap() - 0.145_816_129_947_014_57).abs() < 1e-15);

        let s = StepSchedule::constant(0.1).unwrap();
        assert_eq!(s.step_at(1).unwrap(), 0.1);
        assert_eq!(s.step_at(12345).unwrap(), 0.1);
    }

    #[test]
    fn index_zero_is_rejected() {
        let s = StepSchedule::constant(0.1).unwrap();
        assert_eq!(s.step_at(0), Err(ScheduleError::Index(0)));
        let m = MomentumSchedule::constant(0.5).unwrap();
        assert_eq!(m.momentum_at(0), Err(ScheduleError::Index(0)));
    }

    #[test]
    fn momentum_examples() {
        let m = MomentumSchedule::harmonic_offset(3.0).unwrap();
        assert_eq!(m.momentum_at(1).unwrap(), 0.25);
        assert!((m.momentum_at(97).unwrap() - 0.01).abs() < 1e-17);
        assert_eq!(m.bounds().hi, 0.25);
        let m = MomentumSchedule::constant(0.9).unwrap();
        assert_eq!(m.momentum_at(1000).unwrap(), 0.9);
    }

    #[test]
    fn invalid_momentum_is_rejected() {
        assert!(MomentumSchedule::constant(1.0).is_err());
        assert!(MomentumSchedule::constant(1.5).is_err());
        assert!(MomentumSchedule::constant(-0.1).is_err());
        assert!(MomentumSchedule::harmonic_offset(0.0).is_err());
        assert!(MomentumSchedule::power(2.0, 0.0, 0.5).is_err());
        assert!(MomentumSchedule::power(0.9, 1.0, 0.1).is_ok());
    }

    #[test]
    fn classify_examples() {
        let r = StepSchedule::power(1.0, 3.0, 8.0 / 9.0).unwrap().classify();
        assert!(r.diverges_sum && r.square_summable);
        let r = StepSchedule::constant(1.0).unwrap().classify();
        assert!(r.diverges_sum && !r.square_summable);
        let r = StepSchedule::power(1.0, 3.0, 2.0).unwrap().classify();
        assert!(!r.diverges_sum && r.square_summable);
        let r = StepSchedule::power(1.0, 3.0, 0.5).unwrap().classify();
        assert!(r.diverges_sum && !r.square_summable);
    }

    /// Partial sums of alpha_k^2 over a 10^6-term prefix plateau exactly
    /// when `classify` says they should.
    #[test]
    fn classify_matches_partial_sums() {
        let cases = [
            StepSchedule::power(1.0, 3.0, 8.0 / 9.0).unwrap(),
            StepSchedule::power(1.0, 0.0, 2.0).unwrap(),
            StepSchedule::power(1.0, 3.0, 0.5).unwrap(),
            StepSchedule::constant(0.1).unwrap(),
        ];
        let n = 1_000_000usize;
        for s in cases {
            let mut partial = 0.0;
            let mut at_decade = 0.0;
            for k in 1..=n {
                if k == n / 10 {
                    at_decade = partial;
                }
                partial += s.eval(k).powi(2);
            }
            let rel_increment = (partial - at_decade) / partial;
            // p = 8/9 still moves ~3e-4 relatively over the last decade of a
            // 10^6 prefix; divergent families move > 0.1.
            let plateaued = rel_increment < 1e-2;
            assert_eq!(plateaued, s.classify().square_summable, "{s}: {rel_increment}");
        }
    }

    proptest! {
        #[test]
        fn momentum_stays_in_bounds(s in 0.01f64..20.0, c in 0.0f64..0.99, p in 0.0f64..2.0, k in 1usize..1_000_000) {
            for sched in [
                MomentumSchedule::harmonic_offset(s).unwrap(),
                MomentumSchedule::power(c, s, p).unwrap(),
                MomentumSchedule::constant(c).unwrap(),
            ] {
                let b = sched.bounds();
                let v = sched.momentum_at(k).unwrap();
                prop_assert!(b.lo <= v && v <= b.hi && b.hi < 1.0);
            }
        }
    }

    #[test]
    fn nonincreasing_flag_matches_pairwise() {
        for sched in [
            MomentumSchedule::harmonic_offset(3.0).unwrap(),
            MomentumSchedule::power(0.9, 1.0, 0.1).unwrap(),
            MomentumSchedule::constant(0.5).unwrap(),
        ] {
            let ok = (1..100_000).all(|k| sched.eval(k) >= sched.eval(k + 1));
            assert_eq!(ok, sched.is_nonincreasing());
        }
    }
}
