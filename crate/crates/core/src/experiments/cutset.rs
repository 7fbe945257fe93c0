use rayon::prelude::*;
use serde::Serialize;

use super::{hash_json, ExperimentError, SummaryStats};
use crate::graph::{Graph, VertexId};
use crate::sim::{init_sim, run_with, Horizon, RunOptions, SimConfig};

#[derive(Debug, Clone)]
pub struct CutsetConfig {
    pub sim: SimConfig,
    pub cutset: Vec<VertexId>,
    pub target: Vec<VertexId>,
    /// Conditioned replicas required; batches run until this many reach the target.
    pub min_conditioned: usize,
    /// Hard cap on replicas attempted.
    pub max_replicas: usize,
    /// Replicas that have not reached the target after this many jumps
    /// count as `T = ∞`.
    pub max_jumps: u64,
    pub u_grid: Vec<f64>,
    pub se_multiplier: f64,
}

#[derive(Serialize)]
struct Digest<'a> {
    sim: String,
    cutset: &'a [VertexId],
    target: &'a [VertexId],
    min_conditioned: usize,
    max_replicas: usize,
    max_jumps: u64,
    u_grid: &'a [f64],
    se_multiplier: f64,
    tag: &'a str,
}

impl CutsetConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&Digest {
            sim: format!("{:016x}", self.sim.config_hash()),
            cutset: &self.cutset,
            target: &self.target,
            min_conditioned: self.min_conditioned,
            max_replicas: self.max_replicas,
            max_jumps: self.max_jumps,
            u_grid: &self.u_grid,
            se_multiplier: self.se_multiplier,
            tag: "cutset",
        })
    }
}

/// Checks the cut-set definition for `cutset` relative to the root and the
/// far side `target`: removing the cut-set leaves the component `V⁰` of the
/// root, `target` must equal `V ∖ (C ∪ V⁰)` and be non-empty, and every
/// cut-set vertex must neighbor `target`. Returns `V⁰`.
pub fn validate_cutset(
    g: &Graph,
    root: VertexId,
    cutset: &[VertexId],
    target: &[VertexId],
) -> Result<Vec<VertexId>, ExperimentError> {
    let n = g.vertex_count();
    for &v in cutset.iter().chain(target).chain(std::iter::once(&root)) {
        if v >= n {
            return Err(ExperimentError::NotACutset(format!("vertex {v} out of range")));
        }
    }
    if cutset.is_empty() {
        return Err(ExperimentError::NotACutset("cut-set is empty".into()));
    }
    let mut in_cut = vec![false; n];
    for &c in cutset {
        in_cut[c] = true;
    }
    if in_cut[root] {
        return Err(ExperimentError::NotACutset("root lies in the cut-set".into()));
    }
    let mut inner = vec![false; n];
    inner[root] = true;
    let mut stack = vec![root];
    while let Some(v) = stack.pop() {
        for &u in g.neighbors(v) {
            if !in_cut[u] && !inner[u] {
                inner[u] = true;
                stack.push(u);
            }
        }
    }
    let mut outer: Vec<VertexId> = (0..n).filter(|&v| !in_cut[v] && !inner[v]).collect();
    let mut given = target.to_vec();
    given.sort_unstable();
    given.dedup();
    outer.sort_unstable();
    if outer.is_empty() {
        return Err(ExperimentError::NotACutset(
            "removing the set leaves the graph connected".into(),
        ));
    }
    if outer != given {
        return Err(ExperimentError::NotACutset(format!(
            "far side is {outer:?}, target given as {given:?}"
        )));
    }
    let mut is_outer = vec![false; n];
    for &v in &outer {
        is_outer[v] = true;
    }
    if let Some(&c) = cutset
        .iter()
        .find(|&&c| !g.neighbors(c).iter().any(|&u| is_outer[u]))
    {
        return Err(ExperimentError::NotACutset(format!(
            "cut-set vertex {c} has no neighbor on the far side"
        )));
    }
    Ok((0..n).filter(|&v| inner[v]).collect())
}

/// `Some(L(C,T) - L(C,0))` if the walk enters the target within the jump
/// budget, `None` otherwise.
fn replica(cfg: &CutsetConfig, in_target: &[bool], r: u64) -> Result<Option<f64>, ExperimentError> {
    let sim = cfg.sim.clone().with_replica(r);
    let mut state = init_sim(sim)?;
    let budget = cfg.max_jumps;
    let horizon = Horizon::Until(Box::new(|st, ev| in_target[ev.to] || st.jump_count() >= budget));
    let opts = RunOptions {
        checkpoints: Vec::new(),
        record_events: false,
    };
    if budget == 0 {
        return Ok(None);
    }
    let traj = run_with(&mut state, horizon, &opts)?;
    if !in_target[traj.final_vertex] {
        return Ok(None);
    }
    Ok(Some(
        cfg.cutset
            .iter()
            .map(|&c| traj.final_local_times[c] - traj.initial_local_times[c])
            .sum(),
    ))
}

/// Empirical survival of the cut-set local time accumulated before the walk
/// first enters the far side, against the bound `exp(-w(ℓ_*) u)`.
///
/// Replicas run in batches of `min_conditioned` until that many reach the
/// target or `max_replicas` have been tried. The standard error at each `u`
/// is the binomial SE evaluated at the bound, `sqrt(b(1-b)/n)`.
pub fn cutset_tail_experiment(cfg: &CutsetConfig) -> Result<SummaryStats, ExperimentError> {
    cfg.sim.validate()?;
    validate_cutset(&cfg.sim.graph, cfg.sim.start_vertex, &cfg.cutset, &cfg.target)?;
    if cfg.min_conditioned == 0 || cfg.max_replicas < cfg.min_conditioned {
        return Err(ExperimentError::Config(
            "need 1 <= min_conditioned <= max_replicas".into(),
        ));
    }
    if cfg.u_grid.iter().any(|&u| !(u >= 0.0 && u.is_finite())) {
        return Err(ExperimentError::Config("u grid must be finite and non-negative".into()));
    }
    let mut in_target = vec![false; cfg.sim.graph.vertex_count()];
    for &v in &cfg.target {
        in_target[v] = true;
    }

    let mut attempted = 0usize;
    let mut gains: Vec<f64> = Vec::new();
    while gains.len() < cfg.min_conditioned && attempted < cfg.max_replicas {
        let batch = cfg.min_conditioned.min(cfg.max_replicas - attempted);
        let results: Vec<Option<f64>> = (attempted as u64..(attempted + batch) as u64)
            .into_par_iter()
            .map(|r| replica(cfg, &in_target, r))
            .collect::<Result<_, _>>()?;
        gains.extend(results.into_iter().flatten());
        attempted += batch;
    }

    let ell_star = cfg
        .sim
        .initial_local_times
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min);
    let rate = cfg.sim.w.w(ell_star);
    let n = gains.len();
    let mut s = SummaryStats::new("cutset", cfg.config_hash(), n);
    s.estimate("attempted_replicas", attempted as f64, None);
    s.estimate("hit_fraction", n as f64 / attempted as f64, None);
    s.estimate("w_ell_star", rate, None);
    for &u in &cfg.u_grid {
        let bound = (-rate * u).exp();
        let survival = if n == 0 {
            f64::NAN
        } else {
            gains.iter().filter(|&&g| g > u).count() as f64 / n as f64
        };
        let se = (bound * (1.0 - bound) / n as f64).sqrt();
        let pass = survival <= bound + cfg.se_multiplier * se;
        s.estimate(format!("survival_u{u}"), survival, Some(se));
        s.estimate(format!("bound_u{u}"), bound, None);
        s.verdict(format!("survival({u}) <= bound + {} SE", cfg.se_multiplier), pass);
    }
    s.verdict(
        format!("conditioned replicas >= {}", cfg.min_conditioned),
        n >= cfg.min_conditioned,
    );
    s.outcome_columns = vec!["cutset_gain".into()];
    s.outcomes = gains.iter().map(|&g| vec![g]).collect();
    Ok(s)
}
