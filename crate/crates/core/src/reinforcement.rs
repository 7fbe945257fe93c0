//! Pure-power reinforcement `w(t) = c * t^alpha` on `[floor, inf)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReinforcementError {
    #[error("argument {value} is outside the domain [{floor}, inf)")]
    DomainError { value: f64, floor: f64 },
    #[error("integration bounds are reversed: a = {a} > b = {b}")]
    ReversedBounds { a: f64, b: f64 },
    #[error("invalid reinforcement: {0}")]
    InvalidSpec(String),
    #[error("w({0}) overflows f64")]
    NumericOverflow(f64),
}

/// `w(t) = coefficient * t^exponent`, defined for `t >= floor > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReinforcementSpec {
    pub coefficient: f64,
    pub exponent: f64,
    pub floor: f64,
}

impl ReinforcementSpec {
    pub fn new(coefficient: f64, exponent: f64, floor: f64) -> Result<Self, ReinforcementError> {
        if !(coefficient > 0.0 && coefficient.is_finite()) {
            return Err(ReinforcementError::InvalidSpec(format!(
                "coefficient must be positive and finite, got {coefficient}"
            )));
        }
        if !exponent.is_finite() {
            return Err(ReinforcementError::InvalidSpec(format!(
                "exponent must be finite, got {exponent}"
            )));
        }
        if !(floor > 0.0 && floor.is_finite()) {
            return Err(ReinforcementError::InvalidSpec(format!(
                "domain floor must be positive, got {floor}"
            )));
        }
        Ok(ReinforcementSpec {
            coefficient,
            exponent,
            floor,
        })
    }

    /// `t^alpha` with unit coefficient and floor 1.
    pub fn power(exponent: f64) -> Self {
        ReinforcementSpec {
            coefficient: 1.0,
            exponent,
            floor: 1.0,
        }
    }

    pub fn with_floor(mut self, floor: f64) -> Self {
        self.floor = floor;
        self
    }

    fn check(&self, t: f64) -> Result<(), ReinforcementError> {
        // NaN fails the comparison as well.
        if t >= self.floor {
            Ok(())
        } else {
            Err(ReinforcementError::DomainError {
                value: t,
                floor: self.floor,
            })
        }
    }

    /// `w(t)` without domain checks; hot paths validate inputs once upstream.
    #[inline]
    pub fn w(&self, t: f64) -> f64 {
        self.coefficient * t.powf(self.exponent)
    }

    /// `w'(t)` without domain checks.
    #[inline]
    pub fn dw(&self, t: f64) -> f64 {
        self.coefficient * self.exponent * t.powf(self.exponent - 1.0)
    }

    /// `(w(t), w'(t))` in closed form.
    pub fn eval_w_and_derivative(&self, t: f64) -> Result<(f64, f64), ReinforcementError> {
        self.check(t)?;
        let w = self.w(t);
        if !w.is_finite() {
            return Err(ReinforcementError::NumericOverflow(t));
        }
        Ok((w, self.dw(t)))
    }

    /// `∫_a^b du / w(u)`; pass `f64::INFINITY` for an unbounded upper limit.
    pub fn reciprocal_integral(&self, a: f64, b: f64) -> Result<f64, ReinforcementError> {
        self.check(a)?;
        if b.is_nan() || b < a {
            return Err(ReinforcementError::ReversedBounds { a, b });
        }
        Ok(self.reciprocal_integral_unchecked(a, b))
    }

    pub(crate) fn reciprocal_integral_unchecked(&self, a: f64, b: f64) -> f64 {
        let c = self.coefficient;
        let alpha = self.exponent;
        if a == b {
            return 0.0;
        }
        if b.is_infinite() {
            return if alpha > 1.0 {
                a.powf(1.0 - alpha) / (c * (alpha - 1.0))
            } else {
                f64::INFINITY
            };
        }
        let log_ratio = (b / a).ln();
        if alpha == 1.0 {
            return log_ratio / c;
        }
        // a^{1-α} - b^{1-α} = -a^{1-α} expm1((1-α) ln(b/a)), cancellation-free.
        let one_minus = 1.0 - alpha;
        -a.powf(one_minus) * (one_minus * log_ratio).exp_m1() / (c * (alpha - 1.0))
    }

    /// `∫_a^∞ du / w(u)^m` for `alpha * m > 1`, used by tail corrections.
    pub fn power_tail_integral(&self, a: f64, m: u32) -> f64 {
        let m = f64::from(m);
        let e = self.exponent * m;
        if e <= 1.0 {
            return f64::INFINITY;
        }
        a.powf(1.0 - e) / (self.coefficient.powf(m) * (e - 1.0))
    }

    /// True iff `∫_floor^∞ du / w(u) < ∞`, i.e. `alpha > 1`.
    pub fn is_strongly_reinforced(&self) -> bool {
        self.exponent > 1.0
    }
}
