//! Exact event-driven simulation of VRJP(ℓ, w).
//!
//! Two samplers share one state type:
//!
//! * [`ClockMode::PaperClock`] is the i.i.d.-clock construction: every
//!   directed edge `(i, j)` owns a sequence of unit exponentials
//!   `χ^{(i,j)}_1, χ^{(i,j)}_2, …`. At vertex `i` the candidate for neighbor
//!   `j` is `χ^{(i,j)}_{γ_j} / w(L(j))`, where `γ_j` is one plus the number
//!   of past `i -> j` jumps, and the walk jumps to the argmin. A clock value
//!   is reused on later visits until an `i -> j` jump consumes it.
//! * [`ClockMode::Gillespie`] draws the holding time from
//!   `Exponential(Σ_{j~i} w(L(j)))` and the destination proportionally to
//!   `w(L(j))`. This is the reference law.
//!
//! While the walk sits at `i` only `L(i)` grows, and no rate out of `i`
//! depends on `L(i)`, so both samplers are exact without thinning.

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, VertexId};
use crate::reinforcement::ReinforcementSpec;
use crate::seeding::{self, counter_exponential, derive_seed, AUX_STREAM};
use crate::stats::CompensatedSum;

/// Default ceiling on jumps inside one unit of simulated time.
pub const DEFAULT_EXPLOSION_CEILING: u64 = 10_000_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("explosion guard tripped: {jumps} jumps within one time unit ending at t = {time}")]
    ExplosionGuard { time: f64, jumps: u64 },
    #[error("w(L({vertex})) = w({local_time}) is not finite")]
    NumericOverflow { vertex: VertexId, local_time: f64 },
    #[error("time {t} is outside the trajectory horizon [{start}, {end}]")]
    OutOfHorizon { t: f64, start: f64, end: f64 },
    #[error("trajectory was recorded without its jump log")]
    EventsNotRecorded,
    #[error("vertex {0} is not in the graph")]
    InvalidVertex(VertexId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ClockMode {
    PaperClock,
    #[default]
    Gillespie,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub graph: Arc<Graph>,
    pub w: ReinforcementSpec,
    pub initial_local_times: Vec<f64>,
    pub start_vertex: VertexId,
    pub seed: u64,
    pub replica: u64,
    pub mode: ClockMode,
    pub explosion_ceiling: u64,
}

#[derive(Serialize)]
struct ConfigDigest<'a> {
    edges: Vec<(VertexId, VertexId)>,
    w: &'a ReinforcementSpec,
    initial_local_times: &'a [f64],
    start_vertex: VertexId,
    seed: u64,
    replica: u64,
    mode: ClockMode,
}

impl SimConfig {
    pub fn new(
        graph: Arc<Graph>,
        w: ReinforcementSpec,
        initial_local_times: Vec<f64>,
        start_vertex: VertexId,
    ) -> Self {
        SimConfig {
            graph,
            w,
            initial_local_times,
            start_vertex,
            seed: 0,
            replica: 0,
            mode: ClockMode::Gillespie,
            explosion_ceiling: DEFAULT_EXPLOSION_CEILING,
        }
    }

    /// All initial local times equal to `ell`.
    pub fn uniform(graph: Arc<Graph>, w: ReinforcementSpec, ell: f64, start: VertexId) -> Self {
        let n = graph.vertex_count();
        SimConfig::new(graph, w, vec![ell; n], start)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_replica(mut self, replica: u64) -> Self {
        self.replica = replica;
        self
    }

    pub fn with_mode(mut self, mode: ClockMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let n = self.graph.vertex_count();
        if self.initial_local_times.len() != n {
            return Err(SimError::Config(format!(
                "{} initial local times for {n} vertices",
                self.initial_local_times.len()
            )));
        }
        if self.start_vertex >= n {
            return Err(SimError::Config(format!(
                "start vertex {} is not in the graph",
                self.start_vertex
            )));
        }
        for (v, &ell) in self.initial_local_times.iter().enumerate() {
            if !(ell > 0.0 && ell.is_finite()) {
                return Err(SimError::Config(format!(
                    "initial local time of vertex {v} must be positive and finite, got {ell}"
                )));
            }
            if ell < self.w.floor {
                return Err(SimError::Config(format!(
                    "initial local time {ell} of vertex {v} is below the domain floor {} of w",
                    self.w.floor
                )));
            }
        }
        if self.explosion_ceiling == 0 {
            return Err(SimError::Config("explosion ceiling must be positive".into()));
        }
        Ok(())
    }

    /// 64-bit digest of the canonical JSON form of this config.
    pub fn config_hash(&self) -> u64 {
        let digest = ConfigDigest {
            edges: self.graph.edges(),
            w: &self.w,
            initial_local_times: &self.initial_local_times,
            start_vertex: self.start_vertex,
            seed: self.seed,
            replica: self.replica,
            mode: self.mode,
        };
        let bytes = serde_json::to_vec(&digest).expect("config digest serializes");
        seeding::digest64(&bytes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpEvent {
    /// 1-based jump number.
    pub index: u64,
    /// Jump time `τ_n`.
    pub time: f64,
    pub from: VertexId,
    pub to: VertexId,
    /// Time spent at `from` before this jump.
    pub holding: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct PendingJump {
    to: VertexId,
    holding: f64,
    remaining: f64,
}

#[derive(Debug, Clone)]
pub struct SimState {
    cfg: SimConfig,
    current: VertexId,
    local_times: Vec<CompensatedSum>,
    time: CompensatedSum,
    jump_count: u64,
    /// CSR offsets into the per-directed-edge arrays.
    offsets: Vec<usize>,
    edge_jumps: Vec<u64>,
    edge_streams: Vec<u64>,
    aux: ChaCha8Rng,
    pending: Option<PendingJump>,
    window_start: f64,
    window_jumps: u64,
}

pub fn init_sim(cfg: SimConfig) -> Result<SimState, SimError> {
    cfg.validate()?;
    let g = &cfg.graph;
    let mut offsets = Vec::with_capacity(g.vertex_count() + 1);
    let mut edge_streams = Vec::new();
    offsets.push(0);
    for i in 0..g.vertex_count() {
        for &j in g.neighbors(i) {
            edge_streams.push(derive_seed(cfg.seed, cfg.replica, g.edge_key(i, j)));
        }
        offsets.push(edge_streams.len());
    }
    let aux = seeding::replica_rng(cfg.seed, cfg.replica, AUX_STREAM);
    Ok(SimState {
        current: cfg.start_vertex,
        local_times: cfg
            .initial_local_times
            .iter()
            .map(|&l| CompensatedSum::new(l))
            .collect(),
        time: CompensatedSum::new(0.0),
        jump_count: 0,
        edge_jumps: vec![0; edge_streams.len()],
        offsets,
        edge_streams,
        aux,
        pending: None,
        window_start: 0.0,
        window_jumps: 0,
        cfg,
    })
}

impl SimState {
    pub fn config(&self) -> &SimConfig {
        &self.cfg
    }

    pub fn graph(&self) -> &Graph {
        &self.cfg.graph
    }

    pub fn current_vertex(&self) -> VertexId {
        self.current
    }

    pub fn time(&self) -> f64 {
        self.time.value()
    }

    pub fn jump_count(&self) -> u64 {
        self.jump_count
    }

    pub fn local_time(&self, v: VertexId) -> f64 {
        self.local_times[v].value()
    }

    pub fn local_times(&self) -> Vec<f64> {
        self.local_times.iter().map(CompensatedSum::value).collect()
    }

    fn edge_index(&self, from: VertexId, to: VertexId) -> Option<usize> {
        let pos = self.cfg.graph.neighbors(from).binary_search(&to).ok()?;
        Some(self.offsets[from] + pos)
    }

    /// `γ` for the directed edge: one plus the number of past `from -> to` jumps.
    pub fn clock_index(&self, from: VertexId, to: VertexId) -> Option<u64> {
        self.edge_index(from, to).map(|e| self.edge_jumps[e] + 1)
    }

    /// Number of completed `from -> to` jumps.
    pub fn edge_jump_count(&self, from: VertexId, to: VertexId) -> Option<u64> {
        self.edge_index(from, to).map(|e| self.edge_jumps[e])
    }

    fn weight_of(&self, v: VertexId) -> Result<f64, SimError> {
        let l = self.local_times[v].value();
        let w = self.cfg.w.w(l);
        if w.is_finite() {
            Ok(w)
        } else {
            Err(SimError::NumericOverflow {
                vertex: v,
                local_time: l,
            })
        }
    }

    fn draw(&mut self) -> Result<PendingJump, SimError> {
        let i = self.current;
        let graph = Arc::clone(&self.cfg.graph);
        let nbrs = graph.neighbors(i);
        match self.cfg.mode {
            ClockMode::PaperClock => {
                let base = self.offsets[i];
                let mut best = (f64::INFINITY, nbrs[0]);
                for (pos, &j) in nbrs.iter().enumerate() {
                    let gamma = self.edge_jumps[base + pos] + 1;
                    let chi = counter_exponential(self.edge_streams[base + pos], gamma);
                    let candidate = chi / self.weight_of(j)?;
                    if candidate < best.0 {
                        best = (candidate, j);
                    }
                }
                Ok(PendingJump {
                    to: best.1,
                    holding: best.0,
                    remaining: best.0,
                })
            }
            ClockMode::Gillespie => {
                let mut total = 0.0;
                for &j in nbrs {
                    total += self.weight_of(j)?;
                }
                let e: f64 = self.aux.sample(Exp1);
                let holding = e / total;
                let target = self.aux.random::<f64>() * total;
                let mut acc = 0.0;
                let mut to = *nbrs.last().expect("connected graph has neighbors");
                for &j in nbrs {
                    acc += self.weight_of(j)?;
                    if target < acc {
                        to = j;
                        break;
                    }
                }
                Ok(PendingJump {
                    to,
                    holding,
                    remaining: holding,
                })
            }
        }
    }

    fn pending(&mut self) -> Result<PendingJump, SimError> {
        match self.pending {
            Some(p) => Ok(p),
            None => {
                let p = self.draw()?;
                self.pending = Some(p);
                Ok(p)
            }
        }
    }

    fn apply(&mut self, p: PendingJump) -> Result<JumpEvent, SimError> {
        let from = self.current;
        self.local_times[from].add(p.remaining);
        self.time.add(p.remaining);
        let e = self.edge_index(from, p.to).expect("destination is a neighbor");
        self.edge_jumps[e] += 1;
        self.current = p.to;
        self.jump_count += 1;
        self.pending = None;

        let now = self.time.value();
        if now - self.window_start >= 1.0 {
            self.window_start = now;
            self.window_jumps = 0;
        }
        self.window_jumps += 1;
        if self.window_jumps > self.cfg.explosion_ceiling {
            return Err(SimError::ExplosionGuard {
                time: now,
                jumps: self.window_jumps,
            });
        }
        Ok(JumpEvent {
            index: self.jump_count,
            time: now,
            from,
            to: p.to,
            holding: p.holding,
        })
    }

    /// Advances the walk by exactly one jump.
    pub fn step(&mut self) -> Result<JumpEvent, SimError> {
        let p = self.pending()?;
        self.apply(p)
    }

    /// Advances to time `t` (no later than the next jump), crediting the occupant.
    fn advance_partial(&mut self, t: f64) {
        let dt = t - self.time.value();
        if dt <= 0.0 {
            return;
        }
        self.local_times[self.current].add(dt);
        self.time = CompensatedSum::new(t);
        if let Some(p) = self.pending.as_mut() {
            p.remaining -= dt;
        }
    }

    fn snapshot_at(&self, t: f64) -> Vec<f64> {
        let mut l = self.local_times();
        l[self.current] += t - self.time.value();
        l
    }
}

pub enum Horizon<'a> {
    Time(f64),
    Jumps(u64),
    /// Stops after the first jump for which the predicate holds.
    Until(Box<dyn FnMut(&SimState, &JumpEvent) -> bool + 'a>),
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    /// Times at which to snapshot all local times.
    pub checkpoints: Vec<f64>,
    pub record_events: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            checkpoints: Vec::new(),
            record_events: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub time: f64,
    pub local_times: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub config_hash: u64,
    pub start_time: f64,
    pub end_time: f64,
    pub start_vertex: VertexId,
    pub final_vertex: VertexId,
    pub initial_local_times: Vec<f64>,
    pub final_local_times: Vec<f64>,
    pub events: Vec<JumpEvent>,
    pub checkpoints: Vec<Checkpoint>,
    pub events_recorded: bool,
}

pub fn run(state: &mut SimState, horizon: Horizon<'_>) -> Result<Trajectory, SimError> {
    run_with(state, horizon, &RunOptions::default())
}

pub fn run_with(
    state: &mut SimState,
    mut horizon: Horizon<'_>,
    opts: &RunOptions,
) -> Result<Trajectory, SimError> {
    let start_time = state.time();
    let mut checkpoints_due: Vec<f64> = opts.checkpoints.clone();
    checkpoints_due.sort_by(f64::total_cmp);
    if let Some(&first) = checkpoints_due.first() {
        if first < start_time {
            return Err(SimError::OutOfHorizon {
                t: first,
                start: start_time,
                end: f64::INFINITY,
            });
        }
    }
    let mut checkpoints_due = checkpoints_due.into_iter().peekable();
    let base_jumps = state.jump_count;
    let mut traj = Trajectory {
        config_hash: state.cfg.config_hash(),
        start_time,
        end_time: start_time,
        start_vertex: state.current,
        final_vertex: state.current,
        initial_local_times: state.local_times(),
        final_local_times: Vec::new(),
        events: Vec::new(),
        checkpoints: Vec::new(),
        events_recorded: opts.record_events,
    };

    loop {
        match &mut horizon {
            Horizon::Jumps(n) => {
                if state.jump_count - base_jumps >= *n {
                    break;
                }
            }
            Horizon::Time(t_end) => {
                let p = state.pending()?;
                let next = state.time() + p.remaining;
                if next > *t_end {
                    while let Some(&c) = checkpoints_due.peek() {
                        if c > *t_end {
                            break;
                        }
                        traj.checkpoints.push(Checkpoint {
                            time: c,
                            local_times: state.snapshot_at(c),
                        });
                        checkpoints_due.next();
                    }
                    state.advance_partial(*t_end);
                    break;
                }
            }
            Horizon::Until(_) => {}
        }

        let p = state.pending()?;
        let next = state.time() + p.remaining;
        while let Some(&c) = checkpoints_due.peek() {
            if c > next {
                break;
            }
            traj.checkpoints.push(Checkpoint {
                time: c,
                local_times: state.snapshot_at(c),
            });
            checkpoints_due.next();
        }
        let event = state.step()?;
        if opts.record_events {
            traj.events.push(event);
        }
        if let Horizon::Until(pred) = &mut horizon {
            if pred(state, &event) {
                break;
            }
        }
    }

    traj.end_time = state.time();
    traj.final_vertex = state.current;
    traj.final_local_times = state.local_times();
    Ok(traj)
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrajectoryQuery {
    LocalTime(VertexId, f64),
    SetLocalTime(Vec<VertexId>, f64),
    OccupationShare(VertexId, f64),
    VisitedSet(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum QueryAnswer {
    Real(f64),
    Vertices(Vec<VertexId>),
}

impl Trajectory {
    fn check_time(&self, t: f64) -> Result<(), SimError> {
        if t >= self.start_time && t <= self.end_time {
            Ok(())
        } else {
            Err(SimError::OutOfHorizon {
                t,
                start: self.start_time,
                end: self.end_time,
            })
        }
    }

    fn check_events(&self) -> Result<(), SimError> {
        if self.events_recorded {
            Ok(())
        } else {
            Err(SimError::EventsNotRecorded)
        }
    }

    /// All local times at time `t`, reconstructed from the jump log.
    pub fn local_times_at(&self, t: f64) -> Result<Vec<f64>, SimError> {
        self.check_time(t)?;
        self.check_events()?;
        let mut acc: Vec<CompensatedSum> = self
            .initial_local_times
            .iter()
            .map(|&l| CompensatedSum::new(l))
            .collect();
        let mut prev = self.start_time;
        let mut occupant = self.start_vertex;
        for e in &self.events {
            if prev >= t {
                break;
            }
            acc[e.from].add(e.time.min(t) - prev);
            prev = e.time;
            occupant = e.to;
        }
        if prev < t {
            acc[occupant].add(t - prev);
        }
        Ok(acc.iter().map(CompensatedSum::value).collect())
    }

    pub fn local_time(&self, v: VertexId, t: f64) -> Result<f64, SimError> {
        if v >= self.initial_local_times.len() {
            return Err(SimError::InvalidVertex(v));
        }
        Ok(self.local_times_at(t)?[v])
    }

    pub fn set_local_time(&self, set: &[VertexId], t: f64) -> Result<f64, SimError> {
        let l = self.local_times_at(t)?;
        set.iter()
            .map(|&v| l.get(v).copied().ok_or(SimError::InvalidVertex(v)))
            .sum()
    }

    /// `L(v,t) / Σ_u L(u,t)`, where the denominator is `Σℓ + (t - t_0)`.
    pub fn occupation_share(&self, v: VertexId, t: f64) -> Result<f64, SimError> {
        let l = self.local_times_at(t)?;
        let total: f64 = l.iter().sum();
        l.get(v)
            .map(|x| x / total)
            .ok_or(SimError::InvalidVertex(v))
    }

    /// Vertices occupied at some time in `[start, t]`, sorted.
    pub fn visited_set(&self, t: f64) -> Result<Vec<VertexId>, SimError> {
        self.check_time(t)?;
        self.check_events()?;
        let mut seen = vec![false; self.initial_local_times.len()];
        seen[self.start_vertex] = true;
        for e in self.events.iter().take_while(|e| e.time <= t) {
            seen[e.to] = true;
        }
        Ok((0..seen.len()).filter(|&v| seen[v]).collect())
    }

    pub fn position_at(&self, t: f64) -> Result<VertexId, SimError> {
        self.check_time(t)?;
        self.check_events()?;
        let idx = self.events.partition_point(|e| e.time <= t);
        Ok(if idx == 0 {
            self.start_vertex
        } else {
            self.events[idx - 1].to
        })
    }

    pub fn query(&self, q: &TrajectoryQuery) -> Result<QueryAnswer, SimError> {
        Ok(match q {
            TrajectoryQuery::LocalTime(v, t) => QueryAnswer::Real(self.local_time(*v, *t)?),
            TrajectoryQuery::SetLocalTime(set, t) => {
                QueryAnswer::Real(self.set_local_time(set, *t)?)
            }
            TrajectoryQuery::OccupationShare(v, t) => {
                QueryAnswer::Real(self.occupation_share(*v, *t)?)
            }
            TrajectoryQuery::VisitedSet(t) => QueryAnswer::Vertices(self.visited_set(*t)?),
        })
    }

    /// Jump log as CSV with columns `n,time,from,to,holding`.
    pub fn jump_log_csv(&self) -> String {
        let mut out = String::from("n,time,from,to,holding\n");
        for e in &self.events {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.index, e.time, e.from, e.to, e.holding
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::make_named_graph;
    use crate::stats::{chi_square_homogeneity, mean_se};

    fn path3_cfg(mode: ClockMode, seed: u64) -> SimConfig {
        let g = Arc::new(make_named_graph("path", &[3]).unwrap());
        SimConfig::new(g, ReinforcementSpec::power(2.0), vec![1.0, 1.0, 2.0], 1)
            .with_mode(mode)
            .with_seed(seed)
    }

    #[test]
    fn init_state() {
        let g = Arc::new(make_named_graph("path", &[3]).unwrap());
        let cfg = SimConfig::uniform(g.clone(), ReinforcementSpec::power(2.0), 1.0, 1);
        let s = init_sim(cfg.clone()).unwrap();
        assert_eq!(s.local_times(), vec![1.0, 1.0, 1.0]);
        assert_eq!(s.time(), 0.0);
        assert_eq!(s.clock_index(1, 0), Some(1));
        let mut a = init_sim(cfg.clone()).unwrap();
        let mut b = init_sim(cfg).unwrap();
        for _ in 0..50 {
            assert_eq!(a.step().unwrap(), b.step().unwrap());
        }
        let bad = SimConfig::new(g, ReinforcementSpec::power(2.0).with_floor(1e-3), vec![1.0, 0.0, 1.0], 1);
        assert!(matches!(init_sim(bad), Err(SimError::Config(_))));
    }

    #[test]
    fn gillespie_first_jump_law_on_path() {
        let n = 100_000;
        let mut right = 0u64;
        let mut holdings = Vec::with_capacity(n);
        let mut s = init_sim(path3_cfg(ClockMode::Gillespie, 5)).unwrap();
        for _ in 0..n {
            s.current = 1;
            let e = s.step().unwrap();
            if e.to == 2 {
                right += 1;
            }
            holdings.push(e.holding);
            // Undo the local-time increment so every draw sees L = (1, ., 2).
            s.local_times[1] = CompensatedSum::new(1.0);
        }
        let p = right as f64 / n as f64;
        let sd = (0.8 * 0.2 / n as f64).sqrt();
        assert!((p - 0.8).abs() < 3.0 * sd, "p = {p}");
        let m = mean_se(&holdings);
        assert!((m.mean - 0.2).abs() < 3.0 * m.se, "mean holding {}", m.mean);
    }

    #[test]
    fn two_vertex_always_switches() {
        let g = Arc::new(make_named_graph("path", &[2]).unwrap());
        for mode in [ClockMode::Gillespie, ClockMode::PaperClock] {
            let cfg = SimConfig::uniform(g.clone(), ReinforcementSpec::power(2.0), 1.0, 0).with_mode(mode);
            let mut s = init_sim(cfg).unwrap();
            for _ in 0..100 {
                let from = s.current_vertex();
                assert_eq!(s.step().unwrap().to, 1 - from);
            }
        }
    }

    #[test]
    fn time_horizon_conserves_local_time() {
        for mode in [ClockMode::Gillespie, ClockMode::PaperClock] {
            let g = Arc::new(make_named_graph("cycle", &[6]).unwrap());
            let cfg = SimConfig::uniform(g, ReinforcementSpec::power(1.5), 1.0, 0).with_mode(mode);
            let mut s = init_sim(cfg).unwrap();
            let traj = run(&mut s, Horizon::Time(50.0)).unwrap();
            let inc: f64 = traj.final_local_times.iter().sum::<f64>() - 6.0;
            assert!((inc - 50.0).abs() < 1e-9);
            assert_eq!(traj.end_time, 50.0);
            let recon = traj.local_times_at(50.0).unwrap();
            for (a, b) in recon.iter().zip(&traj.final_local_times) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_jump_horizon() {
        let mut s = init_sim(path3_cfg(ClockMode::Gillespie, 1)).unwrap();
        let traj = run(&mut s, Horizon::Jumps(0)).unwrap();
        assert!(traj.events.is_empty());
        assert_eq!(traj.end_time, 0.0);
    }

    #[test]
    fn split_run_equals_single_run() {
        for mode in [ClockMode::Gillespie, ClockMode::PaperClock] {
            let mut a = init_sim(path3_cfg(mode, 9)).unwrap();
            let whole = run(&mut a, Horizon::Time(30.0)).unwrap();
            let mut b = init_sim(path3_cfg(mode, 9)).unwrap();
            let first = run(&mut b, Horizon::Time(12.5)).unwrap();
            let second = run(&mut b, Horizon::Time(30.0)).unwrap();
            let mut joined = first.events.clone();
            joined.extend(second.events.iter().copied());
            // Splitting a holding re-rounds the clock, so times agree to ulps only.
            assert_eq!(joined.len(), whole.events.len());
            for (x, y) in joined.iter().zip(&whole.events) {
                assert_eq!((x.index, x.from, x.to), (y.index, y.from, y.to));
                assert!((x.time - y.time).abs() < 1e-12);
                assert!((x.holding - y.holding).abs() < 1e-12);
            }
            for (x, y) in second.final_local_times.iter().zip(&whole.final_local_times) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn queries_and_checkpoints() {
        let mut s = init_sim(path3_cfg(ClockMode::Gillespie, 2)).unwrap();
        let opts = RunOptions {
            checkpoints: vec![5.0, 1.0],
            record_events: true,
        };
        let traj = run_with(&mut s, Horizon::Time(10.0), &opts).unwrap();
        assert_eq!(traj.local_time(2, 0.0).unwrap(), 2.0);
        assert_eq!(traj.checkpoints.len(), 2);
        assert_eq!(traj.checkpoints[0].time, 1.0);
        for c in &traj.checkpoints {
            let r = traj.local_times_at(c.time).unwrap();
            for (a, b) in r.iter().zip(&c.local_times) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        let share: f64 = (0..3).map(|v| traj.occupation_share(v, 7.0).unwrap()).sum();
        assert!((share - 1.0).abs() < 1e-12);
        let mut prev = 0;
        for k in 0..=10 {
            let n = traj.visited_set(k as f64).unwrap().len();
            assert!(n >= prev);
            prev = n;
        }
        assert!(matches!(
            traj.local_time(0, 11.0),
            Err(SimError::OutOfHorizon { .. })
        ));
        assert!(traj.jump_log_csv().starts_with("n,time,from,to,holding\n"));
    }

    #[test]
    fn explosion_guard_trips() {
        let g = Arc::new(make_named_graph("path", &[2]).unwrap());
        let mut cfg = SimConfig::uniform(g, ReinforcementSpec::power(2.0), 1.0, 0);
        cfg.explosion_ceiling = 5;
        let mut s = init_sim(cfg).unwrap();
        let r = run(&mut s, Horizon::Jumps(1000));
        assert!(matches!(r, Err(SimError::ExplosionGuard { .. })));
    }

    fn first_jump_counts(cfg: SimConfig, n: u64, bins: &[f64]) -> Vec<u64> {
        let k = cfg.graph.degree(cfg.start_vertex);
        let nb = cfg.graph.neighbors(cfg.start_vertex).to_vec();
        let mut counts = vec![0u64; k * (bins.len() + 1)];
        for r in 0..n {
            let mut s = init_sim(cfg.clone().with_replica(r)).unwrap();
            let e = s.step().unwrap();
            let d = nb.iter().position(|&x| x == e.to).unwrap();
            let b = bins.iter().filter(|&&q| e.holding > q).count();
            counts[d * (bins.len() + 1) + b] += 1;
        }
        counts
    }

    #[test]
    fn modes_agree_on_first_jump_star() {
        let g = Arc::new(make_named_graph("star", &[4]).unwrap());
        let ell = vec![1.0, 1.0, 1.5, 2.0, 1.2];
        let base = SimConfig::new(g, ReinforcementSpec::power(2.0), ell, 0).with_seed(3);
        let bins = [0.03, 0.08, 0.15];
        let a = first_jump_counts(base.clone().with_mode(ClockMode::Gillespie), 20_000, &bins);
        let b = first_jump_counts(base.with_mode(ClockMode::PaperClock), 20_000, &bins);
        let (_, p) = chi_square_homogeneity(&a, &b);
        assert!(p > 0.001, "p = {p}");
    }
}
