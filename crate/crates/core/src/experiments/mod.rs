//! Monte Carlo experiments and deterministic lemma checks.
//!
//! Every experiment returns a [`SummaryStats`]: aggregate estimates with
//! standard errors, per-replica outcomes, and named pass/fail verdicts.
//! Replicas run on the rayon pool and are reduced in replica order, so the
//! summary is a pure function of the config and master seed.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::GraphError;
use crate::probe::ProbeError;
use crate::sim::SimError;

mod auxiliary;
mod cutset;
mod ensemble;
mod finite_range;
mod localization;
mod rubin;
mod traces;

pub use auxiliary::{
    gamma_sequence, trap_probability, GammaSequenceConfig, RSequence, TrapConfig,
};
pub use cutset::{cutset_tail_experiment, validate_cutset, CutsetConfig};
pub use ensemble::{martingale_ensemble_experiment, MartingaleConfig};
pub use finite_range::{finite_range_experiment, FiniteRangeConfig};
pub use localization::{localization_experiment, LocalizationConfig};
pub use rubin::{rubin_sum_experiment, RubinConfig};
pub use traces::{ratio_traces, RatioTraces, TraceRow};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ExperimentError {
    #[error("experiment needs a strongly reinforced w (exponent > 1), got exponent {0}")]
    WeakReinforcement(f64),
    #[error("shells up to radius {needed} exceed the eccentricity {radius} of the root")]
    GraphTooSmall { needed: u32, radius: u32 },
    #[error("not a cut-set: {0}")]
    NotACutset(String),
    #[error("∫ dx/w(x) diverges for exponent {0}")]
    WeakTail(f64),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("invalid experiment config: {0}")]
    Config(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    pub value: f64,
    /// `None` for deterministic quantities.
    pub se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub criterion: String,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub experiment: String,
    /// 64-bit config digest as 16 hex digits.
    pub config_hash: String,
    pub n_replicas: usize,
    pub estimates: Vec<Estimate>,
    pub verdicts: Vec<Verdict>,
    pub outcome_columns: Vec<String>,
    pub outcomes: Vec<Vec<f64>>,
}

impl SummaryStats {
    fn new(experiment: &str, config_hash: u64, n_replicas: usize) -> Self {
        SummaryStats {
            experiment: experiment.to_string(),
            config_hash: format!("{config_hash:016x}"),
            n_replicas,
            estimates: Vec::new(),
            verdicts: Vec::new(),
            outcome_columns: Vec::new(),
            outcomes: Vec::new(),
        }
    }

    fn estimate(&mut self, name: impl Into<String>, value: f64, se: Option<f64>) {
        self.estimates.push(Estimate {
            name: name.into(),
            value,
            se,
        });
    }

    fn verdict(&mut self, criterion: impl Into<String>, pass: bool) {
        self.verdicts.push(Verdict {
            criterion: criterion.into(),
            pass,
        });
    }

    /// True iff every declared verdict passes.
    pub fn pass(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }
}

pub(crate) fn check_replicas(replicas: usize) -> Result<(), ExperimentError> {
    if replicas == 0 {
        Err(ExperimentError::Config("replicas must be at least 1".into()))
    } else {
        Ok(())
    }
}

pub(crate) fn check_fraction(name: &str, x: f64) -> Result<(), ExperimentError> {
    if x > 0.0 && x < 1.0 {
        Ok(())
    } else {
        Err(ExperimentError::Config(format!("{name} must lie in (0, 1), got {x}")))
    }
}

pub(crate) fn hash_json<T: Serialize>(value: &T) -> u64 {
    let bytes = serde_json::to_vec(value).expect("experiment config serializes");
    crate::seeding::digest64(&bytes)
}
