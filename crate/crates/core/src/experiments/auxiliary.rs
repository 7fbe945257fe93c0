use rayon::prelude::*;
use serde::Serialize;

use super::{check_replicas, hash_json, ExperimentError, SummaryStats};
use crate::sim::{init_sim, run_with, Horizon, RunOptions, SimConfig};
use crate::stats::{binomial_se, wilson_interval};

/// Perturbation sequence `r_k` of the recursion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum RSequence {
    Zero,
    /// `r_k = scale / (ν + k)^exponent`, summable for `exponent > 1`.
    Power { scale: f64, exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GammaSequenceConfig {
    pub alpha: f64,
    pub nu: f64,
    pub p: f64,
    pub q: f64,
    pub a0: f64,
    pub r: RSequence,
    pub iterations: u64,
    /// Allowed relative growth of `(ν+k)^p a_k` across the last decade.
    pub growth_tolerance: f64,
}

impl GammaSequenceConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&("gamma_sequence", self))
    }

    fn r(&self, k: u64) -> f64 {
        match self.r {
            RSequence::Zero => 0.0,
            RSequence::Power { scale, exponent } => scale / (self.nu + k as f64).powf(exponent),
        }
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::HypothesisViolated(m));
        if !(self.alpha > 1.0) {
            return bad(format!("alpha must exceed 1, got {}", self.alpha));
        }
        if !(self.nu > 0.0) {
            return bad(format!("nu must be positive, got {}", self.nu));
        }
        if !(self.p > 1.0) {
            return bad(format!("p must exceed 1, got {}", self.p));
        }
        if !(self.q > 0.0) {
            return bad(format!("q must be positive, got {}", self.q));
        }
        let cap = self.q.powf(-1.0 / (self.alpha - 1.0));
        if !(self.a0 > 0.0 && self.a0 < cap) {
            return bad(format!("a0 must lie in (0, q^(-1/(alpha-1))) = (0, {cap}), got {}", self.a0));
        }
        if let RSequence::Power { scale, exponent } = self.r {
            if !(exponent > 1.0) {
                return bad(format!("r_k must be summable, got exponent {exponent}"));
            }
            if scale < 0.0 {
                return bad("r_k scale must be non-negative".into());
            }
        }
        if self.iterations < 10 {
            return Err(ExperimentError::Config("need at least 10 iterations".into()));
        }
        Ok(())
    }
}

/// Iterates the equality case
/// `a_{k+1} = a_k (1 - p/(ν+k) (1 - q a_k^{α-1}) + r_k)` and checks that
/// `b_k = (ν+k)^p a_k` stays bounded with no growth over the last decade.
///
/// If the factor vanishes or turns negative the sequence is absorbed at 0
/// (bounded trivially); the absorption index is reported.
pub fn gamma_sequence(cfg: &GammaSequenceConfig) -> Result<SummaryStats, ExperimentError> {
    cfg.validate()?;
    let slack = 1.0 - cfg.q * cfg.a0.powf(cfg.alpha - 1.0);
    let decade_start = cfg.iterations / 10;
    let mut a = cfg.a0;
    let mut b_max = cfg.nu.powf(cfg.p) * a;
    let mut b_decade_start = f64::NAN;
    let mut b_decade_max = 0.0f64;
    let mut absorbed_at: Option<u64> = None;
    let mut samples = Vec::new();
    let mut next_sample = 1u64;
    for k in 0..cfg.iterations {
        let denom = cfg.nu + k as f64;
        let rk = cfg.r(k);
        if rk > cfg.p / denom * slack {
            return Err(ExperimentError::HypothesisViolated(format!(
                "r_{k} = {rk} exceeds p/(nu+k) (1 - q a0^(alpha-1))"
            )));
        }
        if absorbed_at.is_none() {
            let factor = 1.0 - cfg.p / denom * (1.0 - cfg.q * a.powf(cfg.alpha - 1.0)) + rk;
            a *= factor.max(0.0);
            if a == 0.0 {
                absorbed_at = Some(k + 1);
            }
        }
        let k1 = k + 1;
        let b = (cfg.nu + k1 as f64).powf(cfg.p) * a;
        b_max = b_max.max(b);
        if k1 == decade_start {
            b_decade_start = b;
        }
        if k1 >= decade_start {
            b_decade_max = b_decade_max.max(b);
        }
        if k1 == next_sample || k1 == cfg.iterations {
            samples.push(vec![k1 as f64, a, b]);
            next_sample *= 10;
        }
    }
    let b_final = samples.last().map_or(f64::NAN, |row| row[2]);
    let growth = if b_decade_start > 0.0 {
        (b_decade_max - b_decade_start) / b_decade_start
    } else {
        0.0
    };

    let mut s = SummaryStats::new("gamma_sequence", cfg.config_hash(), 1);
    s.estimate("sup_b", b_max, None);
    s.estimate("b_final", b_final, None);
    s.estimate("last_decade_growth", growth, None);
    s.estimate("absorbed_at", absorbed_at.map_or(-1.0, |k| k as f64), None);
    s.verdict("sup_k (nu+k)^p a_k finite", b_max.is_finite());
    s.verdict(
        format!("last-decade growth <= {}", cfg.growth_tolerance),
        growth <= cfg.growth_tolerance,
    );
    s.outcome_columns = vec!["k".into(), "a_k".into(), "b_k".into()];
    s.outcomes = samples;
    Ok(s)
}

#[derive(Debug, Clone)]
pub struct TrapConfig {
    pub sim: SimConfig,
    pub replicas: usize,
    pub jumps: u64,
    /// Normal quantile of the Wilson interval.
    pub z: f64,
}

#[derive(Serialize)]
struct TrapDigest<'a> {
    sim: String,
    replicas: usize,
    jumps: u64,
    z: f64,
    tag: &'a str,
}

impl TrapConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&TrapDigest {
            sim: format!("{:016x}", self.sim.config_hash()),
            replicas: self.replicas,
            jumps: self.jumps,
            z: self.z,
            tag: "trap_probability",
        })
    }
}

/// Estimates the probability that the walk stays in the closed unit ball of
/// its start for the first `jumps` jumps and checks that the Wilson lower
/// bound is positive.
pub fn trap_probability(cfg: &TrapConfig) -> Result<SummaryStats, ExperimentError> {
    if !cfg.sim.w.is_strongly_reinforced() {
        return Err(ExperimentError::HypothesisViolated(format!(
            "trap probability needs exponent > 1, got {}",
            cfg.sim.w.exponent
        )));
    }
    check_replicas(cfg.replicas)?;
    cfg.sim.validate()?;
    let g = cfg.sim.graph.clone();
    let (ball, _) = g.ball_with_boundary(cfg.sim.start_vertex, 1)?;
    let mut inside = vec![false; g.vertex_count()];
    for v in ball {
        inside[v] = true;
    }
    let budget = cfg.jumps;
    let outcomes: Vec<(bool, u64)> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| -> Result<(bool, u64), ExperimentError> {
            if budget == 0 {
                return Ok((true, 0));
            }
            let mut state = init_sim(cfg.sim.clone().with_replica(r))?;
            let horizon =
                Horizon::Until(Box::new(|st, ev| !inside[ev.to] || st.jump_count() >= budget));
            let opts = RunOptions {
                checkpoints: Vec::new(),
                record_events: false,
            };
            let traj = run_with(&mut state, horizon, &opts)?;
            Ok((inside[traj.final_vertex], state.jump_count()))
        })
        .collect::<Result<_, _>>()?;

    let n = outcomes.len();
    let confined = outcomes.iter().filter(|o| o.0).count();
    let (lo, hi) = wilson_interval(confined, n, cfg.z);
    let mut s = SummaryStats::new("trap_probability", cfg.config_hash(), n);
    let fraction = confined as f64 / n as f64;
    s.estimate("confined_fraction", fraction, Some(binomial_se(fraction, n)));
    s.estimate("wilson_lower", lo, None);
    s.estimate("wilson_upper", hi, None);
    s.verdict(format!("Wilson lower bound (z = {}) > 0", cfg.z), lo > 0.0);
    s.outcome_columns = vec!["confined".into(), "jumps".into()];
    s.outcomes = outcomes
        .iter()
        .map(|&(c, j)| vec![f64::from(u8::from(c)), j as f64])
        .collect();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_named_graph;
    use crate::reinforcement::ReinforcementSpec;
    use std::sync::Arc;

    fn gamma(nu: f64, a0: f64, iterations: u64) -> GammaSequenceConfig {
        GammaSequenceConfig {
            alpha: 2.0,
            nu,
            p: 2.0,
            q: 0.5,
            a0,
            r: RSequence::Zero,
            iterations,
            growth_tolerance: 1e-6,
        }
    }

    #[test]
    fn stated_parameters_absorb_after_one_step() {
        let s = gamma_sequence(&gamma(1.0, 1.0, 1000)).unwrap();
        assert_eq!(s.get("absorbed_at").unwrap().value, 1.0);
        assert_eq!(s.get("sup_b").unwrap().value, 1.0);
        assert!(s.pass());
    }

    #[test]
    fn a0_at_threshold_rejected() {
        assert!(matches!(
            gamma_sequence(&gamma(1.0, 2.0, 100)),
            Err(ExperimentError::HypothesisViolated(_))
        ));
    }

    #[test]
    fn nondegenerate_sequence_stabilizes() {
        let s = gamma_sequence(&gamma(4.0, 1.0, 100_000)).unwrap();
        assert_eq!(s.get("absorbed_at").unwrap().value, -1.0);
        assert!(s.pass(), "{:?}", s.estimates);
        let b = s.get("b_final").unwrap().value;
        assert!(b > 0.0 && b < s.get("sup_b").unwrap().value + 1e-12);
    }

    #[test]
    fn oversized_perturbation_rejected() {
        let mut cfg = gamma(4.0, 1.0, 100);
        cfg.r = RSequence::Power { scale: 10.0, exponent: 2.0 };
        assert!(matches!(gamma_sequence(&cfg), Err(ExperimentError::HypothesisViolated(_))));
    }

    #[test]
    fn trap_on_a_path_is_positive() {
        let g = make_named_graph("path", &[7]).unwrap();
        let cfg = TrapConfig {
            sim: SimConfig::uniform(Arc::new(g), ReinforcementSpec::power(3.0), 1.0, 3).with_seed(9),
            replicas: 200,
            jumps: 500,
            z: 1.96,
        };
        let s = trap_probability(&cfg).unwrap();
        assert!(s.pass(), "{:?}", s.estimates);
        assert!(s.get("confined_fraction").unwrap().value < 1.0);
    }
}
