use rayon::prelude::*;
use serde::Serialize;

use super::{hash_json, ExperimentError, SummaryStats};
use crate::quadrature::simpson_scalar;
use crate::reinforcement::ReinforcementSpec;
use crate::seeding::{counter_exponential, derive_seed};
use crate::stats::mean_se;

/// Simulation stops once `w(x_n) >= CLOSURE_RATIO * max|y|` and the expected
/// remaining mass is at most `CLOSURE_SHARE` of the partial sum.
const CLOSURE_RATIO: f64 = 16.0;
const CLOSURE_SHARE: f64 = 1e-2;
/// Hard cap on simulated terms per sample.
const MAX_TERMS: u64 = 10_000_000;
const EXP_STREAM: u64 = 0x5ce7;
const MARK_STREAM: u64 = 0x7a11;

#[derive(Debug, Clone, Serialize)]
pub struct RubinConfig {
    pub w: ReinforcementSpec,
    pub c: f64,
    pub lambda: f64,
    pub samples: usize,
    pub y_grid: Vec<f64>,
    pub seed: u64,
    pub se_multiplier: f64,
}

impl RubinConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&("rubin", self))
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if !self.w.is_strongly_reinforced() {
            return Err(ExperimentError::WeakTail(self.w.exponent));
        }
        if !(self.c >= self.w.floor && self.c.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "c = {} lies below the domain floor {} of w",
                self.c, self.w.floor
            )));
        }
        if !(self.lambda > 0.0 && self.lambda.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        if self.samples < 2 {
            return Err(ExperimentError::Config("need at least 2 samples".into()));
        }
        let w_star = self.w_star();
        if let Some(&y) = self.y_grid.iter().find(|&&y| !(y < w_star) || !y.is_finite()) {
            return Err(ExperimentError::HypothesisViolated(format!(
                "transform point y = {y} is not below w_* = {w_star}"
            )));
        }
        Ok(())
    }

    /// `inf_{u >= c} w(u)` for the power family.
    fn w_star(&self) -> f64 {
        if self.w.exponent >= 0.0 {
            self.w.w(self.c)
        } else {
            0.0
        }
    }
}

/// `∫_x^∞ du / (w(u) - y)` by its geometric series, valid when `|y| < w(x)`.
fn shifted_tail_series(w: &ReinforcementSpec, x: f64, y: f64) -> f64 {
    if y == 0.0 {
        return w.power_tail_integral(x, 1);
    }
    let ratio = y.abs() / w.w(x);
    let mut total = 0.0;
    let mut y_pow = 1.0;
    for m in 1..=200u32 {
        let term = y_pow * w.power_tail_integral(x, m);
        total += term;
        if term.abs() <= 1e-17 * total.abs() || ratio.powi(m as i32) < 1e-17 {
            break;
        }
        y_pow *= y;
    }
    total
}

/// `∫_c^∞ dx / (w(x) - y)` for `y < w(c)`: Simpson on `[c, X]` with
/// `w(X) = 16|y|`, series beyond.
pub(crate) fn shifted_tail_integral(w: &ReinforcementSpec, c: f64, y: f64) -> f64 {
    let split = ((16.0 * y.abs() / w.coefficient).powf(1.0 / w.exponent)).max(c);
    let head = if split > c {
        simpson_scalar(|x| 1.0 / (w.w(x) - y), c, split, 1e-14).expect("smooth integrand")
    } else {
        0.0
    };
    head + shifted_tail_series(w, split, y)
}

/// One draw of `S_∞ = Σ_j η_j / w(c + Γ_j / λ)`, where `Γ_j` are the partial
/// sums of unit exponentials.
///
/// The first terms are simulated exactly; the points beyond the last
/// simulated one form a rate-λ Poisson process, so the remainder is
/// integrated out in closed form. Returns `(E[S_∞ | F_n], [E[e^{y S_∞} | F_n]])`,
/// both unbiased for the target moments.
fn sample(cfg: &RubinConfig, index: u64, y_max: f64) -> (f64, Vec<f64>) {
    let gaps = derive_seed(cfg.seed, index, EXP_STREAM);
    let marks = derive_seed(cfg.seed, index, MARK_STREAM);
    let w = &cfg.w;
    let mut gamma = 0.0;
    let mut partial = 0.0;
    let mut x = cfg.c;
    for n in 0..MAX_TERMS {
        gamma += counter_exponential(gaps, n);
        x = cfg.c + gamma / cfg.lambda;
        partial += counter_exponential(marks, n) / w.w(x);
        let tail_mean = cfg.lambda * w.power_tail_integral(x, 1);
        if w.w(x) >= CLOSURE_RATIO * y_max && tail_mean <= CLOSURE_SHARE * partial {
            break;
        }
    }
    let mean = partial + cfg.lambda * w.power_tail_integral(x, 1);
    let transforms = cfg
        .y_grid
        .iter()
        .map(|&y| (y * partial + cfg.lambda * y * shifted_tail_series(w, x, y)).exp())
        .collect();
    (mean, transforms)
}

/// Checks the mean and the exponential moments of the limit of the
/// randomly clocked sum against `λ∫_c^∞ dx/w` and
/// `exp(λ y ∫_c^∞ dx/(w - y))`.
pub fn rubin_sum_experiment(cfg: &RubinConfig) -> Result<SummaryStats, ExperimentError> {
    cfg.validate()?;
    let y_max = cfg.y_grid.iter().fold(1.0f64, |m, y| m.max(y.abs()));
    let draws: Vec<(f64, Vec<f64>)> = (0..cfg.samples as u64)
        .into_par_iter()
        .map(|i| sample(cfg, i, y_max))
        .collect();

    let k = cfg.se_multiplier;
    let mut s = SummaryStats::new("rubin", cfg.config_hash(), cfg.samples);
    let means: Vec<f64> = draws.iter().map(|d| d.0).collect();
    let m = mean_se(&means);
    let target = cfg.lambda * cfg.w.power_tail_integral(cfg.c, 1);
    s.estimate("mean_S", m.mean, Some(m.se));
    s.estimate("mean_target", target, None);
    s.verdict(
        format!("|mean S - target| <= {k} SE"),
        (m.mean - target).abs() <= k * m.se,
    );
    for (col, &y) in cfg.y_grid.iter().enumerate() {
        let xs: Vec<f64> = draws.iter().map(|d| d.1[col]).collect();
        let e = mean_se(&xs);
        let target = (cfg.lambda * y * shifted_tail_integral(&cfg.w, cfg.c, y)).exp();
        s.estimate(format!("exp_moment_y{y}"), e.mean, Some(e.se));
        s.estimate(format!("exp_moment_target_y{y}"), target, None);
        s.verdict(
            format!("|E[exp({y} S)] - target| <= {k} SE"),
            (e.mean - target).abs() <= k * e.se,
        );
    }
    s.outcome_columns = std::iter::once("S".to_string())
        .chain(cfg.y_grid.iter().map(|y| format!("exp_y{y}")))
        .collect();
    s.outcomes = draws
        .into_iter()
        .map(|(m, t)| std::iter::once(m).chain(t).collect())
        .collect();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn config(lambda: f64, samples: usize) -> RubinConfig {
        RubinConfig {
            w: ReinforcementSpec::power(2.0),
            c: 1.0,
            lambda,
            samples,
            y_grid: vec![-1.0],
            seed: 17,
            se_multiplier: 3.0,
        }
    }

    #[test]
    fn shifted_integral_oracles() {
        let w = ReinforcementSpec::power(2.0);
        assert!((shifted_tail_integral(&w, 1.0, -1.0) - FRAC_PI_4).abs() < 1e-12);
        assert!((shifted_tail_integral(&w, 1.0, 0.0) - 1.0).abs() < 1e-15);
        // ∫_2^∞ dx/(x²-1) = ln(3)/2.
        assert!((shifted_tail_integral(&w, 2.0, 1.0) - 3f64.ln() / 2.0).abs() < 1e-12);
        // Series branch alone: ∫_10^∞ dx/(x²+1) = π/2 - atan(10).
        let exact = std::f64::consts::FRAC_PI_2 - 10f64.atan();
        assert!((shifted_tail_series(&w, 10.0, -1.0) - exact).abs() < 1e-15);
    }

    #[test]
    fn weak_tail_rejected() {
        let mut cfg = config(1.0, 10);
        cfg.w = ReinforcementSpec::power(1.0);
        assert!(matches!(rubin_sum_experiment(&cfg), Err(ExperimentError::WeakTail(_))));
    }

    #[test]
    fn transform_point_above_w_star_rejected() {
        let mut cfg = config(1.0, 10);
        cfg.y_grid = vec![1.0];
        assert!(matches!(
            rubin_sum_experiment(&cfg),
            Err(ExperimentError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn moments_match_at_moderate_n() {
        let s = rubin_sum_experiment(&config(1.0, 20_000)).unwrap();
        assert!(s.pass(), "{:?}", s.estimates);
        assert!((s.get("exp_moment_target_y-1").unwrap().value - (-FRAC_PI_4).exp()).abs() < 1e-12);
    }

    #[test]
    fn large_lambda_scales_the_mean() {
        let s = rubin_sum_experiment(&config(100.0, 2_000)).unwrap();
        assert_eq!(s.get("mean_target").unwrap().value, 100.0);
        assert!(s.verdicts[0].pass, "{:?}", s.estimates);
    }
}
