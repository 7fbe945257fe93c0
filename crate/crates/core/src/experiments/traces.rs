//! Descriptive ratio traces along one trajectory.
//!
//! The limits these ratios are compared against involve constants with no
//! explicit value, so the traces carry no verdict.

use crate::graph::{Graph, VertexId};
use crate::reinforcement::ReinforcementSpec;
use crate::sim::Trajectory;

use super::ExperimentError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t: f64,
    /// `min_{i ∈ A} L(i,t) / L(𝒩_i,t)`.
    pub neighborhood_min: f64,
    /// `L(C_J(t),t) / L(C_1(t),t)` over the clusters of `A` ordered by local time.
    pub cluster_ratio: f64,
    /// `min (w(L(i,t)) ∧ w(L(j,t))) / W(t)` over adjacent `i, j ∈ A`; NaN if none.
    pub adjacent_weight_share: f64,
    /// Same over pairs of `A` at distance 2; NaN if none.
    pub distance_two_weight_share: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioTraces {
    /// Vertices still gaining local time at the end of the run.
    pub active: Vec<VertexId>,
    /// Connected components of the active set.
    pub clusters: Vec<Vec<VertexId>>,
    pub rows: Vec<TraceRow>,
}

/// Components of the subgraph induced by `set`, each sorted.
fn components(g: &Graph, set: &[VertexId]) -> Vec<Vec<VertexId>> {
    let mut inside = vec![false; g.vertex_count()];
    for &v in set {
        inside[v] = true;
    }
    let mut seen = vec![false; g.vertex_count()];
    let mut out = Vec::new();
    for &v in set {
        if seen[v] {
            continue;
        }
        seen[v] = true;
        let mut comp = vec![v];
        let mut k = 0;
        while k < comp.len() {
            for &u in g.neighbors(comp[k]) {
                if inside[u] && !seen[u] {
                    seen[u] = true;
                    comp.push(u);
                }
            }
            k += 1;
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}

/// Traces on `grid` for the active set `A`: vertices whose local-time gain
/// over the second half of the run is at least `active_share` of that half.
pub fn ratio_traces(
    traj: &Trajectory,
    g: &Graph,
    w: &ReinforcementSpec,
    grid: &[f64],
    active_share: f64,
) -> Result<RatioTraces, ExperimentError> {
    if !(active_share > 0.0 && active_share <= 1.0) {
        return Err(ExperimentError::Config(format!(
            "active_share must be in (0, 1], got {active_share}"
        )));
    }
    let n = g.vertex_count();
    let mid = traj.local_times_at(0.5 * (traj.start_time + traj.end_time))?;
    let half = 0.5 * (traj.end_time - traj.start_time);
    let active: Vec<VertexId> = (0..n)
        .filter(|&v| half > 0.0 && traj.final_local_times[v] - mid[v] >= active_share * half)
        .collect();
    let clusters = components(g, &active);

    let mut adjacent = Vec::new();
    let mut distance_two = Vec::new();
    for (a, &i) in active.iter().enumerate() {
        let dist = g.distances_from(i)?;
        for &j in &active[a + 1..] {
            match dist[j] {
                1 => adjacent.push((i, j)),
                2 => distance_two.push((i, j)),
                _ => {}
            }
        }
    }

    let mut rows = Vec::with_capacity(grid.len());
    for &t in grid {
        let l = traj.local_times_at(t)?;
        let weights: Vec<f64> = l.iter().map(|&x| w.w(x)).collect();
        let total: f64 = weights.iter().sum();
        let neighborhood_min = active
            .iter()
            .map(|&i| l[i] / g.neighbors(i).iter().map(|&u| l[u]).sum::<f64>())
            .fold(f64::NAN, f64::min);
        let mut mass: Vec<f64> = clusters.iter().map(|c| c.iter().map(|&v| l[v]).sum()).collect();
        mass.sort_by(|a, b| b.total_cmp(a));
        let cluster_ratio = match (mass.first(), mass.last()) {
            (Some(top), Some(bottom)) => bottom / top,
            _ => f64::NAN,
        };
        let pair_share = |pairs: &[(VertexId, VertexId)]| {
            pairs
                .iter()
                .map(|&(i, j)| weights[i].min(weights[j]) / total)
                .fold(f64::NAN, f64::min)
        };
        rows.push(TraceRow {
            t,
            neighborhood_min,
            cluster_ratio,
            adjacent_weight_share: pair_share(&adjacent),
            distance_two_weight_share: pair_share(&distance_two),
        });
    }
    Ok(RatioTraces { active, clusters, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_named_graph;
    use crate::sim::{init_sim, run, Horizon, SimConfig};
    use std::sync::Arc;

    fn trajectory(g: &Graph, alpha: f64, t: f64) -> Trajectory {
        let cfg = SimConfig::uniform(Arc::new(g.clone()), ReinforcementSpec::power(alpha), 1.0, 0).with_seed(4);
        run(&mut init_sim(cfg).unwrap(), Horizon::Time(t)).unwrap()
    }

    #[test]
    fn components_split_on_gaps() {
        let g = make_named_graph("path", &[6]).unwrap();
        assert_eq!(components(&g, &[0, 1, 3, 4, 5]), vec![vec![0, 1], vec![3, 4, 5]]);
        assert!(components(&g, &[]).is_empty());
    }

    #[test]
    fn two_vertex_traces_match_local_times() {
        let g = make_named_graph("path", &[2]).unwrap();
        let w = ReinforcementSpec::power(1.0);
        let traj = trajectory(&g, 1.0, 50.0);
        let grid = [10.0, 25.0, 50.0];
        let tr = ratio_traces(&traj, &g, &w, &grid, 0.05).unwrap();
        for (row, &t) in tr.rows.iter().zip(&grid) {
            let l = traj.local_times_at(t).unwrap();
            let expect = tr
                .active
                .iter()
                .map(|&i| l[i] / l[1 - i])
                .fold(f64::NAN, f64::min);
            assert_eq!(row.neighborhood_min.to_bits(), expect.to_bits());
            if tr.active.len() == 2 {
                assert_eq!(tr.clusters.len(), 1);
                assert_eq!(row.cluster_ratio, 1.0);
                assert_eq!(row.adjacent_weight_share, l[0].min(l[1]) / (l[0] + l[1]));
                assert!(row.distance_two_weight_share.is_nan());
            }
        }
    }

    #[test]
    fn cluster_ratio_is_at_most_one() {
        let g = make_named_graph("cycle", &[8]).unwrap();
        let traj = trajectory(&g, 0.5, 200.0);
        let grid: Vec<f64> = (1..=10).map(|k| 20.0 * f64::from(k)).collect();
        let tr = ratio_traces(&traj, &g, &ReinforcementSpec::power(0.5), &grid, 0.01).unwrap();
        assert!(!tr.active.is_empty());
        for row in &tr.rows {
            assert!(row.cluster_ratio > 0.0 && row.cluster_ratio <= 1.0);
        }
    }

    #[test]
    fn bad_share_rejected() {
        let g = make_named_graph("path", &[2]).unwrap();
        let traj = trajectory(&g, 1.0, 5.0);
        assert!(ratio_traces(&traj, &g, &ReinforcementSpec::power(1.0), &[1.0], 0.0).is_err());
    }
}
