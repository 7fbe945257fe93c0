use rayon::prelude::*;
use serde::Serialize;

use super::{check_replicas, hash_json, ExperimentError, SummaryStats};
use crate::graph::{Graph, VertexId};
use crate::sim::{init_sim, run_with, Horizon, RunOptions, SimConfig};
use crate::stats::{binomial_se, median, ols_slope};

#[derive(Debug, Clone)]
pub struct FiniteRangeConfig {
    pub sim: SimConfig,
    pub replicas: usize,
    pub jumps: u64,
    /// Largest shell index `K`; events `T_{3k}` are tracked for `k = 0..=K`.
    pub shells: u32,
    /// Accepted range of the ratio of visited-set medians between the two
    /// halves of the replica set.
    pub median_ratio_bounds: (f64, f64),
}

#[derive(Serialize)]
struct Digest<'a> {
    sim: String,
    replicas: usize,
    jumps: u64,
    shells: u32,
    median_ratio_bounds: (f64, f64),
    tag: &'a str,
}

impl FiniteRangeConfig {
    pub fn config_hash(&self) -> u64 {
        hash_json(&Digest {
            sim: format!("{:016x}", self.sim.config_hash()),
            replicas: self.replicas,
            jumps: self.jumps,
            shells: self.shells,
            median_ratio_bounds: self.median_ratio_bounds,
            tag: "finite_range",
        })
    }
}

/// `shell[v] = Some(k)` iff `δ(ρ,v) = 3k+1`, `k ≤ K`, and `v` has a neighbor
/// at distance `3k+2`: arriving at `v` realizes `T_{3k} < ∞`.
fn shell_marks(g: &Graph, root: VertexId, shells: u32) -> Result<Vec<Option<usize>>, ExperimentError> {
    let d = g.distances_from(root)?;
    let radius = g.eccentricity(root)?;
    let needed = 3 * shells + 2;
    if needed > radius {
        return Err(ExperimentError::GraphTooSmall { needed, radius });
    }
    Ok((0..g.vertex_count())
        .map(|v| {
            let dv = d[v];
            if dv % 3 != 1 || dv > 3 * shells + 1 {
                return None;
            }
            g.neighbors(v)
                .iter()
                .any(|&u| d[u] == dv + 1)
                .then_some((dv / 3) as usize)
        })
        .collect())
}

struct Outcome {
    hits: Vec<bool>,
    /// Visited-set size after 1/4, 1/2, 3/4 and all of the jump budget.
    visited: [usize; 4],
    end_time: f64,
}

fn replica(
    cfg: &FiniteRangeConfig,
    marks: &[Option<usize>],
    r: u64,
) -> Result<Outcome, ExperimentError> {
    let sim = cfg.sim.clone().with_replica(r);
    let n = sim.graph.vertex_count();
    let mut state = init_sim(sim)?;
    let mut hits = vec![false; cfg.shells as usize + 1];
    let mut seen = vec![false; n];
    seen[state.current_vertex()] = true;
    let mut count = 1usize;
    let mut visited = [1usize; 4];
    let marks_at: [u64; 4] = std::array::from_fn(|q| cfg.jumps * (q as u64 + 1) / 4);
    if cfg.jumps > 0 {
        let horizon = Horizon::Until(Box::new(|st, ev| {
            if !seen[ev.to] {
                seen[ev.to] = true;
                count += 1;
            }
            if let Some(k) = marks[ev.to] {
                hits[k] = true;
            }
            let j = st.jump_count();
            for (q, &m) in marks_at.iter().enumerate() {
                if j == m {
                    visited[q] = count;
                }
            }
            j >= cfg.jumps
        }));
        let opts = RunOptions {
            checkpoints: Vec::new(),
            record_events: false,
        };
        run_with(&mut state, horizon, &opts)?;
    }
    Ok(Outcome {
        hits,
        visited,
        end_time: state.time(),
    })
}

/// Tracks the nested shell events `T_{3k} < ∞`, `k = 0..=K`, within a jump
/// budget, and the growth of the visited set.
///
/// Verdicts: empirical `P̂(T_{3k} < ∞)` non-increasing in `k`, negative
/// least-squares slope of `ln P̂` over the shells with `P̂ > 0`, and the
/// median final visited-set size of replicas `0..N/2` within the configured
/// ratio of that of replicas `N/2..N`.
pub fn finite_range_experiment(cfg: &FiniteRangeConfig) -> Result<SummaryStats, ExperimentError> {
    if !cfg.sim.w.is_strongly_reinforced() {
        return Err(ExperimentError::WeakReinforcement(cfg.sim.w.exponent));
    }
    check_replicas(cfg.replicas)?;
    if cfg.replicas < 2 {
        return Err(ExperimentError::Config(
            "finite range needs at least 2 replicas to form two seed batches".into(),
        ));
    }
    cfg.sim.validate()?;
    let marks = shell_marks(&cfg.sim.graph, cfg.sim.start_vertex, cfg.shells)?;
    let outcomes: Vec<Outcome> = (0..cfg.replicas as u64)
        .into_par_iter()
        .map(|r| replica(cfg, &marks, r))
        .collect::<Result<_, _>>()?;

    let n = outcomes.len();
    let k_count = cfg.shells as usize + 1;
    let p_hat: Vec<f64> = (0..k_count)
        .map(|k| outcomes.iter().filter(|o| o.hits[k]).count() as f64 / n as f64)
        .collect();
    let monotone = p_hat.windows(2).all(|w| w[1] <= w[0]);
    let nested = outcomes
        .iter()
        .all(|o| o.hits.windows(2).all(|w| w[0] || !w[1]));
    let (ks, logs): (Vec<f64>, Vec<f64>) = p_hat
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(k, &p)| (k as f64, p.ln()))
        .unzip();
    let slope = ols_slope(&ks, &logs);

    let finals: Vec<f64> = outcomes.iter().map(|o| o.visited[3] as f64).collect();
    let half = n / 2;
    let med_a = median(&finals[..half]);
    let med_b = median(&finals[half..]);
    let ratio = med_a / med_b;

    let mut s = SummaryStats::new("finite_range", cfg.config_hash(), n);
    for (k, &p) in p_hat.iter().enumerate() {
        s.estimate(format!("p_hat_T{}", 3 * k), p, Some(binomial_se(p, n)));
    }
    s.estimate("log_slope", slope, None);
    s.estimate("visited_median_batch_a", med_a, None);
    s.estimate("visited_median_batch_b", med_b, None);
    s.estimate("visited_median_ratio", ratio, None);
    s.estimate("visited_median", median(&finals), None);
    s.verdict("shell indicators nested in every replica", nested);
    s.verdict("p_hat non-increasing in k", monotone);
    s.verdict("log-linear slope < 0", slope < 0.0);
    let (lo, hi) = cfg.median_ratio_bounds;
    s.verdict(
        format!("visited median ratio in [{lo}, {hi}]"),
        ratio >= lo && ratio <= hi,
    );
    s.outcome_columns = (0..k_count)
        .map(|k| format!("hit_T{}", 3 * k))
        .chain(
            ["visited_q1", "visited_q2", "visited_q3", "visited_final", "end_time"]
                .iter()
                .map(|c| c.to_string()),
        )
        .collect();
    s.outcomes = outcomes
        .iter()
        .map(|o| {
            o.hits
                .iter()
                .map(|&h| f64::from(u8::from(h)))
                .chain(o.visited.iter().map(|&v| v as f64))
                .chain(std::iter::once(o.end_time))
                .collect()
        })
        .collect();
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_named_graph;
    use crate::reinforcement::ReinforcementSpec;
    use std::sync::Arc;

    fn config(g: Graph, start: usize, jumps: u64, shells: u32, n: usize) -> FiniteRangeConfig {
        FiniteRangeConfig {
            sim: SimConfig::uniform(Arc::new(g), ReinforcementSpec::power(2.0), 1.0, start)
                .with_seed(5),
            replicas: n,
            jumps,
            shells,
            median_ratio_bounds: (0.5, 2.0),
        }
    }

    #[test]
    fn shells_on_a_path() {
        let g = make_named_graph("path", &[12]).unwrap();
        let marks = shell_marks(&g, 0, 2).unwrap();
        assert_eq!(marks[1], Some(0));
        assert_eq!(marks[4], Some(1));
        assert_eq!(marks[7], Some(2));
        assert_eq!(marks.iter().flatten().count(), 3);
    }

    #[test]
    fn too_many_shells_rejected() {
        let g = make_named_graph("torus2d", &[7, 7]).unwrap();
        assert!(matches!(
            finite_range_experiment(&config(g, 0, 10, 2, 4)),
            Err(ExperimentError::GraphTooSmall { needed: 8, radius: 6 })
        ));
    }

    #[test]
    fn first_shell_hit_from_interior_start() {
        let g = make_named_graph("torus2d", &[9, 9]).unwrap();
        let s = finite_range_experiment(&config(g, 40, 200, 1, 8)).unwrap();
        assert_eq!(s.get("p_hat_T0").unwrap().value, 1.0);
        assert!(s.verdicts[0].pass && s.verdicts[1].pass);
    }

    #[test]
    fn zero_jumps_hits_nothing() {
        let g = make_named_graph("path", &[9]).unwrap();
        let s = finite_range_experiment(&config(g, 0, 0, 1, 4)).unwrap();
        assert!(s.outcomes.iter().all(|row| row[0] == 0.0 && row[5] == 1.0));
    }
}
