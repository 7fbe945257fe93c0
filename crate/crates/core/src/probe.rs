//! Pathwise semimartingale decomposition along simulated trajectories.
//!
//! For a pair `(i, j)` the probe evaluates
//! `Z = R_j − R_i + φ_{ij}(X_t, L(t)) − φ_{ij}(X_0, ℓ)`, the drift
//! `A = ∫ ∂φ_{ij}(k,z)/∂z_k` and the bracket `⟨M⟩ = ∫ Λ_{ij}`, and sets
//! `M = Z − A`. Inside a holding interval only the occupant's coordinate of
//! `z` moves, so every integrand is smooth there and is integrated by
//! adaptive Simpson interval by interval.
//!
//! With `w_h = w(z_h)`, `W = Σ w_h` and `κ_h = κ_{i,j,h}(k,z)`:
//!
//! * `φ_{ij}(k,z) = −Σ_{h≠k} w_h κ_h / W²`
//! * `Λ = Σ_{h~k} w_h κ_h² / W²`
//! * `F = 2 w'(z_k) Σ_{h≠k} w_h κ_h / W³ − Σ_{h≠k} w_h ∂_{z_k} κ_h / W²`

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::forest::{ForestCatalog, ForestError, KappaMatrix};
use crate::graph::{Graph, VertexId};
use crate::linalg::{build_generator, generator_from_weights, poisson_column, LinalgError, MinorInverse};
use crate::quadrature::{adaptive_simpson, QuadratureError, SIMPSON_CAP};
use crate::reinforcement::{ReinforcementError, ReinforcementSpec};
use crate::seeding::derive_seed;
use crate::sim::{init_sim, run, Horizon, SimConfig, SimError, Trajectory};
use crate::stats::{mean_se, CompensatedSum, MeanSe};

/// Largest graph the probe accepts.
pub const PROBE_VERTEX_LIMIT: usize = 8;
/// Absolute Simpson tolerance per holding interval.
pub const PROBE_TOLERANCE: f64 = 1e-10;
/// Fast path versus fresh factorization, relative.
pub const AUDIT_TOLERANCE: f64 = 1e-9;
/// Fewest replicas accepted by the ensemble test.
pub const MIN_REPLICAS: usize = 100;

const AUDIT_STREAM: u64 = 0x5052_4f42_4541_5544;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProbeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Forest(#[from] ForestError),
    #[error(transparent)]
    Reinforcement(#[from] ReinforcementError),
    #[error("quadrature failure: {0}")]
    QuadratureFailure(#[from] QuadratureError),
    #[error("pair ({0}, {1}) must be two distinct vertices of the graph")]
    InvalidPair(VertexId, VertexId),
    #[error("probe graphs are limited to {limit} vertices, got {n}")]
    TooLarge { n: usize, limit: usize },
    #[error("sample grid must be non-decreasing and inside [{start}, {end}]")]
    BadGrid { start: f64, end: f64 },
    #[error("ensemble test needs at least {need} replicas, got {got}")]
    InsufficientReplicas { got: usize, need: usize },
    #[error("Sherman-Morrison fast path drifted from a fresh solve by {delta:e}")]
    AuditFailed { delta: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeOptions {
    pub tolerance: f64,
    pub cap: usize,
    /// Update the minor inverses of the interval start by Sherman–Morrison
    /// instead of refactorizing at every quadrature node.
    pub fast_path: bool,
    /// Fraction of fast-path nodes re-solved from scratch.
    pub audit_fraction: f64,
    pub audit_seed: u64,
    /// At audited nodes, also compare the matrix-route `∂κ` with the forest
    /// identity and with central finite differences.
    pub derivative_audit: bool,
}

impl Default for ProbeOptions {
    fn default() -> Self {
        ProbeOptions {
            tolerance: PROBE_TOLERANCE,
            cap: SIMPSON_CAP,
            fast_path: true,
            audit_fraction: 0.01,
            audit_seed: 0,
            derivative_audit: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditSummary {
    pub fast_path_checks: usize,
    pub fast_path_max_delta: f64,
    pub derivative_checks: usize,
    pub identity_max_delta: f64,
    pub finite_difference_max_delta: f64,
}

impl AuditSummary {
    pub fn merge(&mut self, other: &AuditSummary) {
        self.fast_path_checks += other.fast_path_checks;
        self.fast_path_max_delta = self.fast_path_max_delta.max(other.fast_path_max_delta);
        self.derivative_checks += other.derivative_checks;
        self.identity_max_delta = self.identity_max_delta.max(other.identity_max_delta);
        self.finite_difference_max_delta = self.finite_difference_max_delta.max(other.finite_difference_max_delta);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub i: VertexId,
    pub j: VertexId,
    pub times: Vec<f64>,
    pub r_i: Vec<f64>,
    pub r_j: Vec<f64>,
    pub phi: Vec<f64>,
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub m: Vec<f64>,
    pub bracket: Vec<f64>,
    pub quadrature_tolerance: f64,
    pub audit: AuditSummary,
}

impl ProbeRecord {
    pub const COLUMNS: [&'static str; 8] = ["t", "R_i", "R_j", "phi", "Z", "A", "M", "bracket"];

    pub fn rows(&self) -> Vec<[f64; 8]> {
        (0..self.times.len())
            .map(|s| {
                [
                    self.times[s],
                    self.r_i[s],
                    self.r_j[s],
                    self.phi[s],
                    self.z[s],
                    self.a[s],
                    self.m[s],
                    self.bracket[s],
                ]
            })
            .collect()
    }
}

/// `R_j(t) = ∫_{ℓ_j}^{L(j,t)} du/w(u) − ∫_0^t du/W(u)`, time measured from
/// the trajectory start.
pub fn r_process(traj: &Trajectory, w: &ReinforcementSpec, j: VertexId, t: f64) -> Result<f64, ProbeError> {
    if j >= traj.initial_local_times.len() {
        return Err(SimError::InvalidVertex(j).into());
    }
    if !(traj.start_time..=traj.end_time).contains(&t) {
        return Err(SimError::OutOfHorizon {
            t,
            start: traj.start_time,
            end: traj.end_time,
        }
        .into());
    }
    if !traj.events_recorded {
        return Err(SimError::EventsNotRecorded.into());
    }
    let mut local = traj.initial_local_times.clone();
    let mut occupant = traj.start_vertex;
    let mut now = traj.start_time;
    let mut drift = CompensatedSum::default();
    let mut piece = |from: f64, to: f64, k: VertexId, local: &mut Vec<f64>| -> Result<(), ProbeError> {
        let rest: f64 = (0..local.len()).filter(|&v| v != k).map(|v| w.w(local[v])).sum();
        let zk = local[k];
        let v = adaptive_simpson::<1, _>(|s| [1.0 / (rest + w.w(zk + s))], 0.0, to - from, PROBE_TOLERANCE, SIMPSON_CAP)?;
        drift.add(v[0]);
        local[k] += to - from;
        Ok(())
    };
    for e in &traj.events {
        if e.time > t {
            break;
        }
        piece(now, e.time, occupant, &mut local)?;
        now = e.time;
        occupant = e.to;
    }
    piece(now, t, occupant, &mut local)?;
    Ok(w.reciprocal_integral(traj.initial_local_times[j], local[j])? - drift.value())
}

/// `φ_{ij}(k,z) = Q_{k,i}(z)/w(z_i) − Q_{k,j}(z)/w(z_j)` from the closed-form Poisson columns.
pub fn phi(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    i: VertexId,
    j: VertexId,
    k: VertexId,
) -> Result<f64, ProbeError> {
    let n = g.vertex_count();
    if i >= n || j >= n || k >= n {
        return Err(SimError::InvalidVertex(i.max(j).max(k)).into());
    }
    if i == j {
        return Ok(0.0);
    }
    let b = build_generator(g, w, z)?;
    let qi = poisson_column(&b, &MinorInverse::new(&b.h, i)?);
    let qj = poisson_column(&b, &MinorInverse::new(&b.h, j)?);
    Ok(qi[k] / b.weights[i] - qj[k] / b.weights[j])
}

/// `(Λ_{ij}, F_{ij})` with the walk at `k` and local times `z`.
pub fn instantaneous_rates(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    i: VertexId,
    j: VertexId,
    k: VertexId,
) -> Result<(f64, f64), ProbeError> {
    check_pair(g, i, j)?;
    if k >= g.vertex_count() {
        return Err(SimError::InvalidVertex(k).into());
    }
    let b = build_generator(g, w, z)?;
    let km = KappaMatrix::new(&b.h, i, j)?;
    let v = node_values(g, &b.weights, w.dw(z[k]), k, &km);
    Ok((v.lambda, v.drift))
}

fn check_pair(g: &Graph, i: VertexId, j: VertexId) -> Result<(), ProbeError> {
    let n = g.vertex_count();
    if i == j || i >= n || j >= n {
        return Err(ProbeError::InvalidPair(i, j));
    }
    if n > PROBE_VERTEX_LIMIT {
        return Err(ProbeError::TooLarge {
            n,
            limit: PROBE_VERTEX_LIMIT,
        });
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
struct NodeValues {
    phi: f64,
    lambda: f64,
    drift: f64,
}

fn node_values(g: &Graph, weights: &[f64], dwk: f64, k: VertexId, km: &KappaMatrix) -> NodeValues {
    let total: f64 = weights.iter().sum();
    let dk = km.kappa_derivatives(g, k, dwk);
    let mut s1 = CompensatedSum::default();
    let mut sd = CompensatedSum::default();
    for h in (0..weights.len()).filter(|&h| h != k) {
        s1.add(weights[h] * km.kappa(h, k));
        sd.add(weights[h] * dk[h]);
    }
    let lambda: f64 = g
        .neighbors(k)
        .iter()
        .map(|&h| weights[h] * km.kappa(h, k).powi(2))
        .sum::<f64>()
        / (total * total);
    let (s1, sd) = (s1.value(), sd.value());
    NodeValues {
        phi: -s1 / (total * total),
        lambda,
        drift: 2.0 * dwk * s1 / total.powi(3) - sd / (total * total),
    }
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).fold(0.0, f64::max)
}

/// Max-norm difference relative to `max(|b|_∞, floor)`.
fn vector_delta(a: &[f64], b: &[f64], floor: f64) -> f64 {
    let scale = max_abs(b).max(floor).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Evaluates the probe integrands for one pair, caching nothing across
/// intervals except the forest catalog used by derivative audits.
struct PairProbe<'a> {
    g: &'a Graph,
    w: &'a ReinforcementSpec,
    i: VertexId,
    j: VertexId,
    opts: &'a ProbeOptions,
    rng: ChaCha8Rng,
    catalog: Option<ForestCatalog>,
    audit: AuditSummary,
}

/// State of one holding interval: occupant `k` and local times at its start.
struct IntervalBase {
    k: VertexId,
    z: Vec<f64>,
    weights: Vec<f64>,
    km: Option<KappaMatrix>,
}

impl<'a> PairProbe<'a> {
    fn fresh(&self, z: &[f64]) -> Result<(Vec<f64>, KappaMatrix), ProbeError> {
        let weights: Vec<f64> = z.iter().map(|&x| self.w.w(x)).collect();
        let b = generator_from_weights(self.g, &weights);
        Ok((weights, KappaMatrix::new(&b.h, self.i, self.j)?))
    }

    fn values_at(&mut self, k: VertexId, z: &[f64]) -> Result<NodeValues, ProbeError> {
        let (weights, km) = self.fresh(z)?;
        Ok(node_values(self.g, &weights, self.w.dw(z[k]), k, &km))
    }

    fn interval(&self, k: VertexId, z: &[f64]) -> Result<IntervalBase, ProbeError> {
        let (weights, km) = self.fresh(z)?;
        Ok(IntervalBase {
            k,
            z: z.to_vec(),
            weights,
            km: self.opts.fast_path.then_some(km),
        })
    }

    /// Integrand at offset `s` into the interval.
    fn node(&mut self, base: &IntervalBase, s: f64) -> Result<NodeValues, ProbeError> {
        let k = base.k;
        let zk = base.z[k] + s;
        let dwk = self.w.dw(zk);
        let mut weights = base.weights.clone();
        weights[k] = self.w.w(zk);
        let fast = match &base.km {
            Some(km0) if s != 0.0 => {
                let delta = weights[k] - base.weights[k];
                let (mut mi, mut mj) = (km0.mi.clone(), km0.mj.clone());
                match (mi.update_weight(self.g, k, delta), mj.update_weight(self.g, k, delta)) {
                    (Ok(()), Ok(())) => Some(KappaMatrix::from_minors(mi, mj)),
                    _ => None,
                }
            }
            Some(km0) => Some(km0.clone()),
            None => None,
        };
        let audited = self.opts.audit_fraction > 0.0 && self.rng.random::<f64>() < self.opts.audit_fraction;
        let km = match fast {
            Some(km) if !audited => km,
            Some(km) => {
                let mut z = base.z.clone();
                z[k] = zk;
                let (_, fresh) = self.fresh(&z)?;
                let kf: Vec<f64> = (0..weights.len()).map(|h| km.kappa(h, k)).collect();
                let kr: Vec<f64> = (0..weights.len()).map(|h| fresh.kappa(h, k)).collect();
                // ∂κ is of order w'(z_k)/w(z_k) |κ|; it can vanish identically.
                let dfloor = dwk / weights[k] * max_abs(&kr);
                let delta = vector_delta(&kf, &kr, 0.0).max(vector_delta(
                    &km.kappa_derivatives(self.g, k, dwk),
                    &fresh.kappa_derivatives(self.g, k, dwk),
                    dfloor,
                ));
                self.audit.fast_path_checks += 1;
                self.audit.fast_path_max_delta = self.audit.fast_path_max_delta.max(delta);
                if delta > AUDIT_TOLERANCE {
                    return Err(ProbeError::AuditFailed { delta });
                }
                fresh
            }
            None => {
                let mut z = base.z.clone();
                z[k] = zk;
                self.fresh(&z)?.1
            }
        };
        if audited && self.opts.derivative_audit {
            let mut z = base.z.clone();
            z[k] = zk;
            self.derivative_audit(&z, k, &weights, &km)?;
        }
        Ok(node_values(self.g, &weights, dwk, k, &km))
    }

    fn derivative_audit(&mut self, z: &[f64], k: VertexId, weights: &[f64], km: &KappaMatrix) -> Result<(), ProbeError> {
        if self.catalog.is_none() {
            self.catalog = Some(ForestCatalog::new(self.g)?);
        }
        let n = z.len();
        let dwk = self.w.dw(z[k]);
        let matrix = km.kappa_derivatives(self.g, k, dwk);
        let sums = self.catalog.as_ref().expect("catalog built above").sums(weights);
        let identity: Vec<f64> = (0..n).map(|h| sums.kappa_derivative(dwk, self.i, self.j, h, k)).collect();
        let step = 1e-5 * z[k];
        let kappa_at = |x: f64| -> Result<Vec<f64>, ProbeError> {
            let mut zz = z.to_vec();
            zz[k] = x;
            let (_, m) = self.fresh(&zz)?;
            Ok((0..n).map(|h| m.kappa(h, k)).collect())
        };
        let (kp, kn) = (kappa_at(z[k] + step)?, kappa_at(z[k] - step)?);
        let fd: Vec<f64> = kp.iter().zip(&kn).map(|(a, b)| (a - b) / (2.0 * step)).collect();
        let kappa: Vec<f64> = (0..n).map(|h| km.kappa(h, k)).collect();
        let dfloor = dwk / weights[k] * max_abs(&kappa);
        self.audit.derivative_checks += 1;
        self.audit.identity_max_delta = self.audit.identity_max_delta.max(vector_delta(&identity, &matrix, dfloor));
        self.audit.finite_difference_max_delta = self.audit.finite_difference_max_delta.max(vector_delta(&fd, &matrix, dfloor));
        Ok(())
    }

    /// `[∫F, ∫Λ, ∫1/W]` over `[0, len]` of the interval.
    fn integrate(&mut self, base: &IntervalBase, len: f64) -> Result<[f64; 3], ProbeError> {
        let mut failure = None;
        let (tol, cap) = (self.opts.tolerance, self.opts.cap);
        let rest: f64 = (0..base.weights.len()).filter(|&v| v != base.k).map(|v| base.weights[v]).sum();
        let out = adaptive_simpson::<3, _>(
            |s| match self.node(base, s) {
                Ok(v) => [v.drift, v.lambda, 1.0 / (rest + self.w.w(base.z[base.k] + s))],
                Err(e) => {
                    failure.get_or_insert(e);
                    [f64::NAN; 3]
                }
            },
            0.0,
            len,
            tol,
            cap,
        );
        match (out, failure) {
            (_, Some(e)) => Err(e),
            (Ok(v), None) => Ok(v),
            (Err(e), None) => Err(e.into()),
        }
    }
}

/// Decomposes `Z_{ij}` along `traj` at the times in `grid`.
///
/// A grid time equal to a jump time is sampled after the jump.
pub fn decompose_trajectory(
    traj: &Trajectory,
    g: &Graph,
    w: &ReinforcementSpec,
    i: VertexId,
    j: VertexId,
    grid: &[f64],
    opts: &ProbeOptions,
) -> Result<ProbeRecord, ProbeError> {
    check_pair(g, i, j)?;
    if !traj.events_recorded {
        return Err(SimError::EventsNotRecorded.into());
    }
    let ordered = grid.windows(2).all(|p| p[0] <= p[1]);
    let inside = grid.iter().all(|&t| t >= traj.start_time && t <= traj.end_time);
    if !ordered || !inside {
        return Err(ProbeError::BadGrid {
            start: traj.start_time,
            end: traj.end_time,
        });
    }
    let mut probe = PairProbe {
        g,
        w,
        i,
        j,
        opts,
        rng: ChaCha8Rng::seed_from_u64(derive_seed(opts.audit_seed, traj.config_hash, AUDIT_STREAM)),
        catalog: None,
        audit: AuditSummary::default(),
    };
    let ell = &traj.initial_local_times;
    let mut local = ell.clone();
    let mut occupant = traj.start_vertex;
    let mut now = traj.start_time;
    let phi0 = probe.values_at(occupant, &local)?.phi;
    // Running ∫F, ∫Λ and ∫1/W.
    let mut acc = [CompensatedSum::default(); 3];
    let mut rec = ProbeRecord {
        i,
        j,
        times: Vec::with_capacity(grid.len()),
        r_i: Vec::new(),
        r_j: Vec::new(),
        phi: Vec::new(),
        z: Vec::new(),
        a: Vec::new(),
        m: Vec::new(),
        bracket: Vec::new(),
        quadrature_tolerance: opts.tolerance,
        audit: AuditSummary::default(),
    };
    let mut next = 0usize;

    let advance = |probe: &mut PairProbe,
                   acc: &mut [CompensatedSum; 3],
                   to: f64,
                   now: &mut f64,
                   local: &mut Vec<f64>,
                   k: VertexId|
     -> Result<(), ProbeError> {
        if to > *now {
            let base = probe.interval(k, local)?;
            let v = probe.integrate(&base, to - *now)?;
            for (a, x) in acc.iter_mut().zip(v) {
                a.add(x);
            }
            local[k] += to - *now;
            *now = to;
        }
        Ok(())
    };
    let sample = |probe: &mut PairProbe,
                  rec: &mut ProbeRecord,
                  t: f64,
                  k: VertexId,
                  local: &[f64],
                  acc: &[CompensatedSum; 3]|
     -> Result<(), ProbeError> {
        let [a, b, d] = acc.map(|x| x.value());
        let ri = w.reciprocal_integral(ell[i], local[i])? - d;
        let rj = w.reciprocal_integral(ell[j], local[j])? - d;
        let ph = probe.values_at(k, local)?.phi;
        let z = rj - ri + ph - phi0;
        rec.times.push(t);
        rec.r_i.push(ri);
        rec.r_j.push(rj);
        rec.phi.push(ph);
        rec.z.push(z);
        rec.a.push(a);
        rec.m.push(z - a);
        rec.bracket.push(b);
        Ok(())
    };

    let stops = traj
        .events
        .iter()
        .map(|e| (e.time, Some(e.to)))
        .chain(std::iter::once((traj.end_time, None)));
    for (stop, jump_to) in stops {
        while next < grid.len() && grid[next] < stop {
            advance(&mut probe, &mut acc, grid[next], &mut now, &mut local, occupant)?;
            sample(&mut probe, &mut rec, grid[next], occupant, &local, &acc)?;
            next += 1;
        }
        advance(&mut probe, &mut acc, stop, &mut now, &mut local, occupant)?;
        if let Some(to) = jump_to {
            occupant = to;
        }
        while next < grid.len() && grid[next] == stop {
            sample(&mut probe, &mut rec, grid[next], occupant, &local, &acc)?;
            next += 1;
        }
    }
    rec.audit = probe.audit;
    Ok(rec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleReport {
    pub i: VertexId,
    pub j: VertexId,
    pub horizon: f64,
    pub replicas: usize,
    pub m: MeanSe,
    pub m_squared: MeanSe,
    pub bracket: MeanSe,
    /// `|mean M² − mean ⟨M⟩| / mean ⟨M⟩`.
    pub bracket_relative_gap: f64,
    pub pass_mean: bool,
    pub pass_bracket: bool,
    pub pass: bool,
    pub audit: AuditSummary,
}

/// Replica outcomes `(M(T), ⟨M⟩(T))` of one ensemble.
pub fn ensemble_samples(
    cfg: &SimConfig,
    i: VertexId,
    j: VertexId,
    horizon: f64,
    replicas: usize,
    opts: &ProbeOptions,
) -> Result<(Vec<(f64, f64)>, AuditSummary), ProbeError> {
    check_pair(&cfg.graph, i, j)?;
    cfg.validate()?;
    let outcomes: Vec<Result<(f64, f64, AuditSummary), ProbeError>> = (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let rc = cfg.clone().with_replica(r);
            let mut state = init_sim(rc)?;
            let traj = run(&mut state, Horizon::Time(horizon))?;
            let ro = ProbeOptions {
                audit_seed: derive_seed(opts.audit_seed, r, AUDIT_STREAM),
                ..opts.clone()
            };
            let rec = decompose_trajectory(&traj, &cfg.graph, &cfg.w, i, j, &[traj.end_time], &ro)?;
            Ok((rec.m[0], rec.bracket[0], rec.audit))
        })
        .collect();
    let mut audit = AuditSummary::default();
    let mut samples = Vec::with_capacity(replicas);
    for o in outcomes {
        let (m, b, a) = o?;
        audit.merge(&a);
        samples.push((m, b));
    }
    Ok((samples, audit))
}

/// Checks `E[M(T)] = 0` and `E[M(T)²] = E[⟨M⟩(T)]` on independent replicas.
pub fn ensemble_martingale_test(
    cfg: &SimConfig,
    i: VertexId,
    j: VertexId,
    horizon: f64,
    replicas: usize,
    opts: &ProbeOptions,
) -> Result<EnsembleReport, ProbeError> {
    if replicas < MIN_REPLICAS {
        return Err(ProbeError::InsufficientReplicas {
            got: replicas,
            need: MIN_REPLICAS,
        });
    }
    let (samples, audit) = ensemble_samples(cfg, i, j, horizon, replicas, opts)?;
    Ok(summarize_ensemble(i, j, horizon, &samples, audit))
}

/// Mean and bracket checks on replica outcomes `(M(T), ⟨M⟩(T))`: pass iff
/// `|mean M| <= 3 SE` and `|mean M² − mean ⟨M⟩| <= 0.05 mean ⟨M⟩`.
pub fn summarize_ensemble(
    i: VertexId,
    j: VertexId,
    horizon: f64,
    samples: &[(f64, f64)],
    audit: AuditSummary,
) -> EnsembleReport {
    let ms: Vec<f64> = samples.iter().map(|s| s.0).collect();
    let m2: Vec<f64> = ms.iter().map(|m| m * m).collect();
    let bs: Vec<f64> = samples.iter().map(|s| s.1).collect();
    let (m, m_squared, bracket) = (mean_se(&ms), mean_se(&m2), mean_se(&bs));
    let gap = (m_squared.mean - bracket.mean).abs() / bracket.mean;
    let pass_mean = m.mean.abs() <= 3.0 * m.se;
    let pass_bracket = gap <= 0.05;
    EnsembleReport {
        i,
        j,
        horizon,
        replicas: samples.len(),
        m,
        m_squared,
        bracket,
        bracket_relative_gap: gap,
        pass_mean,
        pass_bracket,
        pass: pass_mean && pass_bracket,
        audit,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_named_graph, random_connected_graph};
    use crate::sim::JumpEvent;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn sq() -> ReinforcementSpec {
        ReinforcementSpec::power(2.0)
    }

    fn still(n: usize, end: f64) -> Trajectory {
        Trajectory {
            config_hash: 0,
            start_time: 0.0,
            end_time: end,
            start_vertex: 0,
            final_vertex: 0,
            initial_local_times: vec![1.0; n],
            final_local_times: {
                let mut v = vec![1.0; n];
                v[0] += end;
                v
            },
            events: Vec::new(),
            checkpoints: Vec::new(),
            events_recorded: true,
        }
    }

    #[test]
    fn r_process_no_jump_values() {
        let traj = still(2, 1.0);
        let atan = 2f64.atan() - 1f64.atan();
        assert!((r_process(&traj, &sq(), 0, 1.0).unwrap() - (0.5 - atan)).abs() < 1e-9);
        assert!((r_process(&traj, &sq(), 1, 1.0).unwrap() + atan).abs() < 1e-9);
        assert_eq!(r_process(&traj, &sq(), 1, 0.0).unwrap(), 0.0);
        assert!(matches!(r_process(&traj, &sq(), 0, 2.0), Err(ProbeError::Sim(SimError::OutOfHorizon { .. }))));
    }

    #[test]
    fn phi_and_rates_two_vertex() {
        let g = make_named_graph("path", &[2]).unwrap();
        let z = [1.0, 2.0];
        assert_relative_eq!(phi(&g, &sq(), &z, 0, 1, 0).unwrap(), -0.2, max_relative = 1e-12);
        assert_eq!(phi(&g, &sq(), &z, 1, 1, 0).unwrap(), 0.0);
        let (lambda, _) = instantaneous_rates(&g, &sq(), &z, 0, 1, 0).unwrap();
        assert_relative_eq!(lambda, 0.25, max_relative = 1e-12);
        let (lambda_rev, _) = instantaneous_rates(&g, &sq(), &z, 1, 0, 0).unwrap();
        assert_relative_eq!(lambda, lambda_rev, max_relative = 1e-12);
    }

    #[test]
    fn phi_matches_kappa_form_and_bound() {
        for seed in 0..5 {
            let g = random_connected_graph(6, 0.4, seed);
            let z: Vec<f64> = (0..6).map(|v| 1.0 + ((v * 7 + seed as usize) % 5) as f64 * 0.6).collect();
            let w = ReinforcementSpec::power(2.5);
            let b = build_generator(&g, &w, &z).unwrap();
            for (i, j) in g.edges() {
                let km = KappaMatrix::new(&b.h, i, j).unwrap();
                for k in 0..6 {
                    let via_q = phi(&g, &w, &z, i, j, k).unwrap();
                    let via_k = node_values(&g, &b.weights, w.dw(z[k]), k, &km).phi;
                    assert!((via_q - via_k).abs() < 1e-12 * via_q.abs().max(1.0));
                    assert!(via_q.abs() <= 2.0 / (b.weights[i] * b.weights[j]) + 1e-12);
                }
            }
        }
    }

    #[test]
    fn star_center_rates_match_direct_sum() {
        let g = make_named_graph("star", &[4]).unwrap();
        let w = sq();
        let z = [1.5, 1.0, 2.0, 1.2, 3.0];
        let b = build_generator(&g, &w, &z).unwrap();
        let km = KappaMatrix::new(&b.h, 1, 2).unwrap();
        let total: f64 = b.weights.iter().sum();
        let direct: f64 = (1..5).map(|h| b.weights[h] * km.kappa(h, 0).powi(2)).sum::<f64>() / total.powi(2);
        let (lambda, _) = instantaneous_rates(&g, &w, &z, 1, 2, 0).unwrap();
        assert_relative_eq!(lambda, direct, max_relative = 1e-12);
    }

    #[test]
    fn drift_matches_phi_derivative() {
        let g = make_named_graph("complete", &[4]).unwrap();
        let w = ReinforcementSpec::power(3.0);
        let z = vec![1.2, 1.9, 1.4, 2.3];
        for k in 0..4 {
            let (_, f) = instantaneous_rates(&g, &w, &z, 0, 2, k).unwrap();
            let step = 1e-5;
            let mut zp = z.clone();
            zp[k] += step;
            let mut zm = z.clone();
            zm[k] -= step;
            let fd = (phi(&g, &w, &zp, 0, 2, k).unwrap() - phi(&g, &w, &zm, 0, 2, k).unwrap()) / (2.0 * step);
            assert!((f - fd).abs() < 1e-7 * fd.abs().max(1e-3), "{f} vs {fd}");
        }
    }

    fn sample_traj(seed: u64, horizon: f64) -> (Arc<Graph>, Trajectory) {
        let g = Arc::new(make_named_graph("complete", &[3]).unwrap());
        let cfg = SimConfig::uniform(g.clone(), sq(), 1.0, 0).with_seed(seed);
        let mut s = init_sim(cfg).unwrap();
        (g, run(&mut s, Horizon::Time(horizon)).unwrap())
    }

    #[test]
    fn decomposition_structure() {
        let (g, traj) = sample_traj(3, 2.0);
        let mut grid: Vec<f64> = (0..=20).map(|s| s as f64 * 0.1).collect();
        grid.extend(traj.events.iter().map(|e| e.time));
        grid.sort_by(f64::total_cmp);
        let opts = ProbeOptions {
            audit_fraction: 0.2,
            derivative_audit: true,
            ..ProbeOptions::default()
        };
        let rec = decompose_trajectory(&traj, &g, &sq(), 0, 1, &grid, &opts).unwrap();
        assert_eq!(rec.z[0], 0.0);
        assert_eq!(rec.m[0], 0.0);
        assert_eq!(rec.bracket[0], 0.0);
        assert!(rec.bracket.windows(2).all(|p| p[1] >= p[0]));
        for s in 0..rec.times.len() {
            let t = rec.times[s];
            let ri = r_process(&traj, &sq(), 0, t).unwrap();
            assert!((ri - rec.r_i[s]).abs() < 1e-8);
        }
        assert!(rec.audit.fast_path_checks > 0 && rec.audit.fast_path_max_delta <= AUDIT_TOLERANCE);
        assert!(rec.audit.identity_max_delta < 1e-8, "{:?}", rec.audit);
        assert!(rec.audit.finite_difference_max_delta < 1e-4, "{:?}", rec.audit);

        // Across a jump Z moves by the jump of φ; R and L are continuous.
        let eps = 1e-9;
        let mut grid: Vec<f64> = traj.events.iter().flat_map(|e| [e.time - eps, e.time]).collect();
        grid.sort_by(f64::total_cmp);
        let rec = decompose_trajectory(&traj, &g, &sq(), 0, 1, &grid, &opts).unwrap();
        for (n, e) in traj.events.iter().enumerate() {
            let (before, after) = (2 * n, 2 * n + 1);
            let left = phi(&g, &sq(), &traj.local_times_at(e.time).unwrap(), 0, 1, e.from).unwrap();
            let dz = rec.z[after] - rec.z[before];
            assert!((dz - (rec.phi[after] - left)).abs() < 1e-6, "{dz}");
        }
    }

    #[test]
    fn antisymmetry_and_fast_path_agreement() {
        let (g, traj) = sample_traj(11, 1.5);
        let grid: Vec<f64> = (0..=15).map(|s| s as f64 * 0.1).collect();
        let opts = ProbeOptions::default();
        let a = decompose_trajectory(&traj, &g, &sq(), 0, 2, &grid, &opts).unwrap();
        let b = decompose_trajectory(&traj, &g, &sq(), 2, 0, &grid, &opts).unwrap();
        let slow = ProbeOptions {
            fast_path: false,
            ..opts.clone()
        };
        let c = decompose_trajectory(&traj, &g, &sq(), 0, 2, &grid, &slow).unwrap();
        for s in 0..grid.len() {
            assert!((a.m[s] + b.m[s]).abs() < 1e-9);
            assert!((a.a[s] + b.a[s]).abs() < 1e-9);
            assert!((a.z[s] + b.z[s]).abs() < 1e-12);
            assert!((a.phi[s] + b.phi[s]).abs() < 1e-12);
            assert!((a.bracket[s] - b.bracket[s]).abs() < 1e-9);
            assert!((a.a[s] - c.a[s]).abs() < 1e-8);
        }
    }

    #[test]
    fn tolerance_halving_changes_drift_little() {
        let (g, traj) = sample_traj(5, 2.0);
        let coarse = ProbeOptions {
            tolerance: 2e-10,
            ..ProbeOptions::default()
        };
        let a = decompose_trajectory(&traj, &g, &sq(), 0, 1, &[2.0], &ProbeOptions::default()).unwrap();
        let b = decompose_trajectory(&traj, &g, &sq(), 0, 1, &[2.0], &coarse).unwrap();
        let intervals = traj.events.len() as f64 + 1.0;
        assert!((a.a[0] - b.a[0]).abs() < 10.0 * 2e-10 * intervals);
    }

    #[test]
    fn grid_and_pair_errors() {
        let (g, traj) = sample_traj(1, 1.0);
        let o = ProbeOptions::default();
        assert!(matches!(decompose_trajectory(&traj, &g, &sq(), 0, 0, &[0.5], &o), Err(ProbeError::InvalidPair(0, 0))));
        assert!(matches!(decompose_trajectory(&traj, &g, &sq(), 0, 1, &[0.5, 0.2], &o), Err(ProbeError::BadGrid { .. })));
        assert!(matches!(decompose_trajectory(&traj, &g, &sq(), 0, 1, &[1.5], &o), Err(ProbeError::BadGrid { .. })));
        let cfg = SimConfig::uniform(g.clone(), sq(), 1.0, 0);
        assert!(matches!(
            ensemble_martingale_test(&cfg, 0, 1, 1.0, 1, &o),
            Err(ProbeError::InsufficientReplicas { got: 1, .. })
        ));
    }

    #[test]
    fn jump_times_sample_after_jump() {
        let g = make_named_graph("path", &[2]).unwrap();
        let mut traj = still(2, 1.0);
        traj.events.push(JumpEvent {
            index: 1,
            time: 0.5,
            from: 0,
            to: 1,
            holding: 0.5,
        });
        traj.final_vertex = 1;
        let rec = decompose_trajectory(&traj, &g, &sq(), 0, 1, &[0.5, 1.0], &ProbeOptions::default()).unwrap();
        let expected = phi(&g, &sq(), &[1.5, 1.0], 0, 1, 1).unwrap();
        assert_relative_eq!(rec.phi[0], expected, max_relative = 1e-12);
    }

    #[test]
    fn small_ensemble_runs() {
        let g = Arc::new(make_named_graph("complete", &[3]).unwrap());
        let cfg = SimConfig::uniform(g, sq(), 1.0, 0).with_seed(2);
        let r = ensemble_martingale_test(&cfg, 0, 1, 1.0, 200, &ProbeOptions::default()).unwrap();
        assert_eq!(r.replicas, 200);
        assert!(r.bracket.mean > 0.0);
        assert!(r.m.mean.abs() <= 4.0 * r.m.se);
    }
}
