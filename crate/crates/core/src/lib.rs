//! Simulation and verification tools for vertex-reinforced jump processes.

pub mod experiments;
pub mod forest;
pub mod graph;
pub mod io;
pub mod linalg;
pub mod probe;
pub mod quadrature;
pub mod reinforcement;
pub mod seeding;
pub mod sim;
pub mod stats;
pub mod verify;

pub use graph::{load_graph, load_graph_labeled, make_named_graph, DirectedEdge, Graph, GraphError, VertexId};
pub use reinforcement::{ReinforcementError, ReinforcementSpec};
pub use sim::{
    init_sim, run, run_with, Checkpoint, ClockMode, Horizon, JumpEvent, QueryAnswer, RunOptions,
    SimConfig, SimError, SimState, Trajectory, TrajectoryQuery,
};
