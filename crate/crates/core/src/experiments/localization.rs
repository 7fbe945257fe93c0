use rayon::prelude::*;
use serde::Serialize;

use super::{check_fraction, check_replicas, hash_json, ExperimentError, SummaryStats};
use crate::sim::{init_sim, run_with, Horizon, RunOptions, SimConfig};
use crate::stats::{binomial_se, mean_se};

#[derive(Debug, Clone)]
pub struct LocalizationConfig {
    pub sim: SimConfig,
    pub replicas: usize,
    pub horizon: f64,
    pub share_min: f64,
    pub stall_max: f64,
    /// Required fraction of successful replicas.
    pub pass_fraction: f64,
}

#[derive(Serialize)]
struct Digest<'a> {
    sim: String,
    replicas: usize,
    horizon: f64,
    share_min: f64,
    stall_max: f64,
    pass_fraction: f64,
    tag: &'a str,
}

impl LocalizationConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&Digest {
            sim: format!("{:016x}", self.sim.config_hash()),
            replicas: self.replicas,
            horizon: self.horizon,
            share_min: self.share_min,
            stall_max: self.stall_max,
            pass_fraction: self.pass_fraction,
            tag: "localization",
        })
    }

    fn validate(&self) -> Result<(), ExperimentError> {
        if !self.sim.w.is_strongly_reinforced() {
            return Err(ExperimentError::WeakReinforcement(self.sim.w.exponent));
        }
        check_replicas(self.replicas)?;
        check_fraction("share_min", self.share_min)?;
        check_fraction("stall_max", self.stall_max)?;
        check_fraction("pass_fraction", self.pass_fraction)?;
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(ExperimentError::Config(format!(
                "horizon must be positive and finite, got {}",
                self.horizon
            )));
        }
        self.sim.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Outcome {
    dominant: usize,
    share: f64,
    stall: f64,
    unique: bool,
}

fn replica(cfg: &LocalizationConfig, r: u64) -> Result<Outcome, ExperimentError> {
    let sim = cfg.sim.clone().with_replica(r);
    let graph = sim.graph.clone();
    let initial = sim.initial_local_times.clone();
    let mut state = init_sim(sim)?;
    let t = cfg.horizon;
    let opts = RunOptions {
        checkpoints: vec![0.5 * t],
        record_events: false,
    };
    let traj = run_with(&mut state, Horizon::Time(t), &opts)?;
    let last = &traj.final_local_times;
    let mid = &traj.checkpoints[0].local_times;

    let mut dominant = 0;
    for v in 1..last.len() {
        if last[v] > last[dominant] {
            dominant = v;
        }
    }
    let unique = (0..last.len()).all(|v| v == dominant || last[v] < last[dominant]);
    let dist = graph.distances_from(dominant)?;
    let stall: f64 = (0..last.len())
        .filter(|&u| dist[u] >= 2)
        .map(|u| last[u] - mid[u])
        .sum();
    Ok(Outcome {
        dominant,
        share: (last[dominant] - initial[dominant]) / t,
        stall,
        unique,
    })
}

/// Runs `replicas` independent walks to time `horizon` and checks that the
/// walk settles on one vertex and its neighborhood.
///
/// The dominant share is the occupation share `(L(v*,T) - ℓ_{v*}) / T`; the
/// stall is the local time gained during `(T/2, T]` by vertices at distance
/// at least 2 from `v*`.
pub fn localization_experiment(cfg: &LocalizationConfig) -> Result<SummaryStats, ExperimentError> {
    cfg.validate()?;
    let outcomes: Vec<Outcome> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| replica(cfg, r))
        .collect::<Result<_, _>>()?;

    let success = |o: &Outcome| o.share >= cfg.share_min && o.stall <= cfg.stall_max;
    let n = outcomes.len();
    let passed = outcomes.iter().filter(|o| success(o)).count();
    let fraction = passed as f64 / n as f64;
    let share_stats = mean_se(&outcomes.iter().map(|o| o.share).collect::<Vec<_>>());
    let stall_stats = mean_se(&outcomes.iter().map(|o| o.stall).collect::<Vec<_>>());

    let mut s = SummaryStats::new("localization", cfg.config_hash(), n);
    s.estimate("pass_fraction", fraction, Some(binomial_se(fraction, n)));
    s.estimate("mean_share", share_stats.mean, Some(share_stats.se));
    s.estimate("mean_stall", stall_stats.mean, Some(stall_stats.se));
    s.estimate("share_min", cfg.share_min, None);
    s.estimate("stall_max", cfg.stall_max, None);
    s.verdict(
        format!("pass_fraction >= {}", cfg.pass_fraction),
        fraction >= cfg.pass_fraction,
    );
    s.verdict(
        "dominant vertex unique in every replica",
        outcomes.iter().all(|o| o.unique),
    );
    s.outcome_columns = ["dominant", "share", "stall", "unique", "success"]
        .iter()
        .map(|c| c.to_string())
        .collect();
    s.outcomes = outcomes
        .iter()
        .map(|o| {
            vec![
                o.dominant as f64,
                o.share,
                o.stall,
                f64::from(u8::from(o.unique)),
                f64::from(u8::from(success(o))),
            ]
        })
        .collect();
    Ok(s)
}
