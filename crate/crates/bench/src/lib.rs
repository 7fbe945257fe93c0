//! Fixtures shared by the criterion benches.

use std::sync::Arc;

use vrjp_core::{init_sim, make_named_graph, run, Graph, Horizon, ReinforcementSpec, SimConfig, Trajectory};

/// `w(t) = t^alpha` on `graph` with `ℓ ≡ 1`, started at vertex 0.
pub fn sim_config(graph: Graph, alpha: f64, seed: u64) -> SimConfig {
    SimConfig::uniform(Arc::new(graph), ReinforcementSpec::power(alpha), 1.0, 0).with_seed(seed)
}

pub fn torus(side: usize) -> Graph {
    make_named_graph("torus2d", &[side, side]).expect("torus side at least 3")
}

/// Local times `z_v = 1 + v/4`.
pub fn ramp(n: usize) -> Vec<f64> {
    (0..n).map(|v| 1.0 + 0.25 * v as f64).collect()
}

/// A recorded trajectory of `jumps` jumps on `K_n`.
pub fn complete_trajectory(n: usize, jumps: u64) -> (Graph, Trajectory) {
    let g = make_named_graph("complete", &[n]).expect("complete graph");
    let mut state = init_sim(sim_config(g.clone(), 2.0, 5)).expect("valid config");
    let traj = run(&mut state, Horizon::Jumps(jumps)).expect("finite run");
    (g, traj)
}
