use vrjp_bench::{complete_trajectory, ramp, sim_config, torus};
use vrjp_core::init_sim;

#[test]
fn fixtures_are_valid_and_deterministic() {
    assert_eq!(torus(5).vertex_count(), 25);
    assert_eq!(ramp(3), vec![1.0, 1.25, 1.5]);
    init_sim(sim_config(torus(5), 1.0, 1)).unwrap();
    let (g, a) = complete_trajectory(4, 50);
    let (_, b) = complete_trajectory(4, 50);
    assert_eq!(g.edge_count(), 6);
    assert_eq!(a.events.len(), 50);
    assert_eq!(a, b);
}
