use serde::Serialize;

use super::{hash_json, ExperimentError, SummaryStats};
use crate::graph::VertexId;
use crate::probe::{ensemble_samples, summarize_ensemble, ProbeError, ProbeOptions, MIN_REPLICAS};
use crate::sim::SimConfig;

#[derive(Debug, Clone)]
pub struct MartingaleConfig {
    pub sim: SimConfig,
    pub i: VertexId,
    pub j: VertexId,
    pub horizon: f64,
    pub replicas: usize,
    pub probe: ProbeOptions,
}

#[derive(Serialize)]
struct Digest<'a> {
    sim: String,
    i: VertexId,
    j: VertexId,
    horizon: f64,
    replicas: usize,
    probe: &'a ProbeOptions,
    tag: &'a str,
}

impl MartingaleConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&Digest {
            sim: format!("{:016x}", self.sim.config_hash()),
            i: self.i,
            j: self.j,
            horizon: self.horizon,
            replicas: self.replicas,
            probe: &self.probe,
            tag: "martingale_ensemble",
        })
    }
}

/// Ensemble check of the martingale part of `Z_{ij}` at the horizon:
/// `E[M(T)] = 0` within 3 SE and `E[M(T)²]` within 5% of `E[⟨M⟩(T)]`.
pub fn martingale_ensemble_experiment(cfg: &MartingaleConfig) -> Result<SummaryStats, ExperimentError> {
    if cfg.replicas < MIN_REPLICAS {
        return Err(ProbeError::InsufficientReplicas {
            got: cfg.replicas,
            need: MIN_REPLICAS,
        }
        .into());
    }
    if !(cfg.horizon > 0.0 && cfg.horizon.is_finite()) {
        return Err(ExperimentError::Config(format!(
            "horizon must be positive and finite, got {}",
            cfg.horizon
        )));
    }
    let (samples, audit) = ensemble_samples(&cfg.sim, cfg.i, cfg.j, cfg.horizon, cfg.replicas, &cfg.probe)?;
    let r = summarize_ensemble(cfg.i, cfg.j, cfg.horizon, &samples, audit);
    let mut s = SummaryStats::new("martingale_ensemble", cfg.config_hash(), r.replicas);
    s.estimate("mean_M", r.m.mean, Some(r.m.se));
    s.estimate("mean_M_squared", r.m_squared.mean, Some(r.m_squared.se));
    s.estimate("mean_bracket", r.bracket.mean, Some(r.bracket.se));
    s.estimate("bracket_relative_gap", r.bracket_relative_gap, None);
    s.estimate("fast_path_checks", r.audit.fast_path_checks as f64, None);
    s.estimate("fast_path_max_delta", r.audit.fast_path_max_delta, None);
    s.verdict("|mean M(T)| <= 3 SE", r.pass_mean);
    s.verdict("|mean M(T)^2 - mean <M>(T)| <= 0.05 mean <M>(T)", r.pass_bracket);
    s.outcome_columns = vec!["M".into(), "bracket".into()];
    s.outcomes = samples.iter().map(|&(m, b)| vec![m, b]).collect();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_named_graph;
    use crate::reinforcement::ReinforcementSpec;
    use std::sync::Arc;

    fn config(replicas: usize) -> MartingaleConfig {
        let g = Arc::new(make_named_graph("complete", &[3]).unwrap());
        MartingaleConfig {
            sim: SimConfig::uniform(g, ReinforcementSpec::power(2.0), 1.0, 0).with_seed(11),
            i: 0,
            j: 1,
            horizon: 2.0,
            replicas,
            probe: ProbeOptions::default(),
        }
    }

    #[test]
    fn small_ensemble_is_consistent() {
        let s = martingale_ensemble_experiment(&config(400)).unwrap();
        assert!(s.verdicts[0].pass, "{:?}", s.estimates);
        // The 5% bracket tolerance needs the full ensemble; at this size
        // compare within 3 SE of the squared mean.
        let m2 = s.get("mean_M_squared").unwrap();
        let gap = (m2.value - s.get("mean_bracket").unwrap().value).abs();
        assert!(gap <= 3.0 * m2.se.unwrap(), "{:?}", s.estimates);
        assert_eq!(s.outcomes.len(), 400);
    }

    #[test]
    fn too_few_replicas_rejected() {
        assert!(matches!(
            martingale_ensemble_experiment(&config(10)),
            Err(ExperimentError::Probe(ProbeError::InsufficientReplicas { .. }))
        ));
    }
}
