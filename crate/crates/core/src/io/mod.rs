//! Configuration, run manifests, command dispatch and result emission.
//!
//! A run is fully determined by its [`RunManifest`]: the validated config
//! with defaults applied, canonicalized (object keys sorted) and hashed.
//! Every artifact carries that hash.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Serialize;
use serde_json::Value;
use thiserror::Error;

use crate::experiments::{self, ratio_traces, ExperimentError, SummaryStats};
use crate::graph::{load_graph_labeled, make_named_graph, Graph, GraphError, VertexId};
use crate::probe::{decompose_trajectory, ProbeError, ProbeOptions, ProbeRecord};
use crate::reinforcement::ReinforcementSpec;
use crate::seeding::digest64;
use crate::sim::{init_sim, run_with, Horizon, RunOptions, SimConfig, SimError, Trajectory};
use crate::verify::{run_suite, CriterionReport, SuiteOptions, VerifyError};

mod config;
mod table;

pub use config::{
    ExperimentSpec, GraphSource, HorizonKind, HorizonSpec, InitialLocalTimes, LabConfig, PowerR,
    ProbeSpec, ReportSpec, SimulateSpec, VerifySpec, WSpec,
};
pub use table::{emit_results, Column, Format, ResultTable};

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "VRJP_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "vrjp-out";
pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config is not valid JSON: {0}")]
    Syntax(String),
    #[error("missing key {path}")]
    MissingKey { path: String },
    #[error("unknown key {path}{}", hint.as_ref().map(|h| format!(" ({h})")).unwrap_or_default())]
    UnknownKey { path: String, hint: Option<String> },
    #[error("{path}: expected {expected}, found {found}")]
    TypeError {
        path: String,
        expected: String,
        found: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    pub fn path(&self) -> Option<&str> {
        match self {
            ConfigError::Syntax(_) => None,
            ConfigError::MissingKey { path }
            | ConfigError::UnknownKey { path, .. }
            | ConfigError::TypeError { path, .. }
            | ConfigError::Invalid { path, .. } => Some(path),
        }
    }
}

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("result table: {0}")]
    Table(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Probe(#[from] ProbeError),
    #[error(transparent)]
    Experiment(#[from] ExperimentError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("{}: {source}", path.display())]
    Nested { path: PathBuf, source: Box<IoError> },
}

impl IoError {
    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            IoError::Config(ConfigError::Syntax(_)) => "Syntax",
            IoError::Config(ConfigError::MissingKey { .. }) => "MissingKey",
            IoError::Config(ConfigError::UnknownKey { .. }) => "UnknownKey",
            IoError::Config(ConfigError::TypeError { .. }) => "TypeError",
            IoError::Config(ConfigError::Invalid { .. }) => "InvalidValue",
            IoError::Io { .. } => "IoError",
            IoError::Table(_) => "TableError",
            IoError::Graph(_) => "GraphError",
            IoError::Sim(_) => "SimError",
            IoError::Probe(_) => "ProbeError",
            IoError::Experiment(_) => "ExperimentError",
            IoError::Verify(_) => "VerifyError",
            IoError::Nested { source, .. } => source.kind(),
        }
    }

    /// True for errors caused by the configuration rather than the run.
    pub fn is_config(&self) -> bool {
        match self {
            IoError::Config(_) | IoError::Graph(_) => true,
            IoError::Sim(SimError::Config(_) | SimError::InvalidVertex(_)) => true,
            IoError::Experiment(e) => matches!(
                e,
                ExperimentError::Config(_)
                    | ExperimentError::WeakReinforcement(_)
                    | ExperimentError::WeakTail(_)
                    | ExperimentError::HypothesisViolated(_)
                    | ExperimentError::NotACutset(_)
                    | ExperimentError::GraphTooSmall { .. }
                    | ExperimentError::Graph(_)
                    | ExperimentError::Sim(SimError::Config(_))
            ),
            IoError::Nested { source, .. } => source.is_config(),
            _ => false,
        }
    }

    /// One-line JSON object for the error stream.
    pub fn to_json(&self) -> String {
        let path = match self {
            IoError::Config(c) => c.path().map(str::to_string),
            IoError::Nested { source, .. } => match source.as_ref() {
                IoError::Config(c) => c.path().map(str::to_string),
                _ => None,
            },
            _ => None,
        };
        let hint = match self {
            IoError::Config(ConfigError::UnknownKey { hint, .. }) => hint.clone(),
            _ => None,
        };
        serde_json::json!({
            "error": self.kind(),
            "message": self.to_string(),
            "path": path,
            "hint": hint,
        })
        .to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Simulate,
    Probe,
    Verify,
    Experiment,
    Report,
}

/// Values set on the command line, applied before validation and hashing.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub replicas: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: Command,
    pub config: LabConfig,
    pub seed: Option<u64>,
    pub artifact_version: String,
    #[serde(serialize_with = "hex64")]
    pub config_hash: u64,
    /// Output files, relative to the output directory.
    pub outputs: Vec<PathBuf>,
    /// Directory `graph.file` and suite entries are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn hex64<S: serde::Serializer>(x: &u64, s: S) -> Result<S::Ok, S::Error> {
    s.serialize_str(&format!("{x:016x}"))
}

/// JSON text with object keys sorted at every level.
pub fn canonical_json(v: &Value) -> String {
    fn go(v: &Value, out: &mut String) {
        match v {
            Value::Object(map) => {
                let mut keys: Vec<&String> = map.keys().collect();
                keys.sort();
                out.push('{');
                for (k, key) in keys.into_iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    out.push_str(&Value::String(key.clone()).to_string());
                    out.push(':');
                    go(&map[key], out);
                }
                out.push('}');
            }
            Value::Array(items) => {
                out.push('[');
                for (k, item) in items.iter().enumerate() {
                    if k > 0 {
                        out.push(',');
                    }
                    go(item, out);
                }
                out.push(']');
            }
            leaf => out.push_str(&leaf.to_string()),
        }
    }
    let mut out = String::new();
    go(v, &mut out);
    out
}

fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|source| IoError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Parses and validates a config for `command`; `graph.file` is resolved
/// against `base_dir`.
pub fn parse_config_in(
    text: &str,
    command: Command,
    overrides: Overrides,
    base_dir: &Path,
) -> Result<RunManifest, IoError> {
    let mut root: Value = serde_json::from_str(text).map_err(|e| ConfigError::Syntax(e.to_string()))?;
    if let Value::Object(map) = &mut root {
        if let Some(seed) = overrides.seed {
            map.insert("seed".into(), seed.into());
        }
        if let Some(r) = overrides.replicas {
            map.insert("replicas".into(), r.into());
        }
    }
    let read_file = |file: &str| {
        let path = base_dir.join(file);
        std::fs::read_to_string(&path).map_err(|e| ConfigError::Invalid {
            path: "graph.file".into(),
            message: format!("cannot read {}: {e}", path.display()),
        })
    };
    let config = config::parse_lab_config(root, command, &read_file)?;
    let canonical = serde_json::to_value(&config).expect("config serializes");
    Ok(RunManifest {
        command,
        seed: config.seed,
        config,
        artifact_version: ARTIFACT_VERSION.to_string(),
        config_hash: digest64(canonical_json(&canonical).as_bytes()),
        outputs: Vec::new(),
        base_dir: base_dir.to_path_buf(),
    })
}

/// [`parse_config_in`] relative to the working directory, no overrides.
pub fn parse_config(text: &str, command: Command) -> Result<RunManifest, IoError> {
    parse_config_in(text, command, Overrides::default(), Path::new("."))
}

pub fn parse_config_file(path: &Path, command: Command, overrides: Overrides) -> Result<RunManifest, IoError> {
    let text = read_text(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_config_in(&text, command, overrides, base)
}

/// `--out`, else `$VRJP_OUT_DIR`, else `vrjp-out`.
pub fn resolve_out_dir(cli: Option<PathBuf>) -> PathBuf {
    cli.or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Graph with the external label of each dense vertex id.
pub struct ResolvedGraph {
    pub graph: Arc<Graph>,
    pub labels: Vec<u64>,
    index: HashMap<u64, VertexId>,
}

impl ResolvedGraph {
    fn new(graph: Graph, labels: Vec<u64>) -> Self {
        let index = labels.iter().enumerate().map(|(v, &l)| (l, v)).collect();
        ResolvedGraph {
            graph: Arc::new(graph),
            labels,
            index,
        }
    }

    pub fn vertex(&self, label: u64, path: &str) -> Result<VertexId, ConfigError> {
        self.index.get(&label).copied().ok_or_else(|| ConfigError::Invalid {
            path: path.to_string(),
            message: format!("vertex {label} is not in the graph"),
        })
    }

    fn vertices(&self, labels: &[u64], path: &str) -> Result<Vec<VertexId>, ConfigError> {
        labels
            .iter()
            .enumerate()
            .map(|(k, &l)| self.vertex(l, &format!("{path}[{k}]")))
            .collect()
    }
}

impl RunManifest {
    pub fn graph(&self) -> Result<ResolvedGraph, IoError> {
        match &self.config.graph {
            None => Err(ConfigError::MissingKey { path: "graph".into() }.into()),
            Some(GraphSource::Family { family, params }) => {
                let params: Vec<usize> = params.iter().map(|&p| p as usize).collect();
                let g = make_named_graph(family, &params)?;
                let labels = (0..g.vertex_count() as u64).collect();
                Ok(ResolvedGraph::new(g, labels))
            }
            Some(GraphSource::File { file, digest }) => {
                let path = self.base_dir.join(file);
                let text = read_text(&path)?;
                if format!("{:016x}", digest64(text.as_bytes())) != *digest {
                    return Err(ConfigError::Invalid {
                        path: "graph.file".into(),
                        message: format!("{} changed after the manifest was built", path.display()),
                    }
                    .into());
                }
                let (g, labels) = load_graph_labeled(&text)?;
                Ok(ResolvedGraph::new(g, labels))
            }
        }
    }

    pub fn w(&self) -> Result<ReinforcementSpec, IoError> {
        let w = self.config.w.ok_or(ConfigError::MissingKey { path: "w".into() })?;
        Ok(ReinforcementSpec::new(w.coefficient, w.exponent, w.floor).map_err(|e| ConfigError::Invalid {
            path: "w".into(),
            message: e.to_string(),
        })?)
    }

    fn seed(&self) -> Result<u64, ConfigError> {
        self.config.seed.ok_or(ConfigError::MissingKey { path: "seed".into() })
    }

    fn replicas(&self) -> Result<usize, ConfigError> {
        self.config
            .replicas
            .map(|r| r as usize)
            .ok_or(ConfigError::MissingKey { path: "replicas".into() })
    }

    fn horizon(&self) -> Result<HorizonSpec, ConfigError> {
        self.config.horizon.ok_or(ConfigError::MissingKey { path: "horizon".into() })
    }

    pub fn sim_config(&self, g: &ResolvedGraph) -> Result<SimConfig, IoError> {
        let n = g.graph.vertex_count();
        let ell = match &self.config.initial_local_times {
            InitialLocalTimes::Uniform(x) => vec![*x; n],
            InitialLocalTimes::PerVertex(map) => {
                let mut ell = vec![1.0; n];
                for (&label, &x) in map {
                    ell[g.vertex(label, &format!("initial_local_times.{label}"))?] = x;
                }
                ell
            }
        };
        let start = g.vertex(self.config.start_vertex, "start_vertex")?;
        let cfg = SimConfig::new(g.graph.clone(), self.w()?, ell, start)
            .with_seed(self.seed()?)
            .with_mode(self.config.mode);
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Result of one command.
#[derive(Debug, Clone, Default)]
pub struct RunOutcome {
    /// All declared verdicts passed.
    pub pass: bool,
    pub outputs: Vec<PathBuf>,
    pub summaries: Vec<SummaryStats>,
    pub reports: Vec<CriterionReport>,
    /// Human-readable digest.
    pub digest: String,
}

/// Summary as emitted: the schema fields plus the manifest hash.
#[derive(Serialize)]
struct SummaryDoc<'a> {
    manifest: String,
    experiment: &'a str,
    config_hash: &'a str,
    n_replicas: usize,
    estimates: &'a [experiments::Estimate],
    verdicts: &'a [experiments::Verdict],
}

fn summary_json(s: &SummaryStats, manifest_hash: u64) -> String {
    let doc = SummaryDoc {
        manifest: format!("{manifest_hash:016x}"),
        experiment: &s.experiment,
        config_hash: &s.config_hash,
        n_replicas: s.n_replicas,
        estimates: &s.estimates,
        verdicts: &s.verdicts,
    };
    let mut text = serde_json::to_string_pretty(&doc).expect("summary serializes");
    text.push('\n');
    text
}

fn summary_digest(s: &SummaryStats) -> String {
    let mut out = format!("{} ({} replicas, config {})\n", s.experiment, s.n_replicas, s.config_hash);
    for e in &s.estimates {
        match e.se {
            Some(se) => writeln!(out, "  {} = {} ± {}", e.name, e.value, se),
            None => writeln!(out, "  {} = {}", e.name, e.value),
        }
        .expect("writing to a String");
    }
    for v in &s.verdicts {
        writeln!(out, "  [{}] {}", if v.pass { "PASS" } else { "FAIL" }, v.criterion).expect("writing to a String");
    }
    out
}

/// Collects outputs relative to the output directory.
struct Emitter<'a> {
    dir: &'a Path,
    hash: u64,
    outputs: Vec<PathBuf>,
}

impl Emitter<'_> {
    fn table(&mut self, name: &str, table: &ResultTable) -> Result<(), IoError> {
        emit_results(table, Format::Csv, self.hash, &self.dir.join(name))?;
        self.outputs.push(PathBuf::from(name).with_extension("csv"));
        Ok(())
    }

    fn text(&mut self, name: &str, text: &str) -> Result<(), IoError> {
        table::write_file(&self.dir.join(name), text)?;
        self.outputs.push(PathBuf::from(name));
        Ok(())
    }

    fn summary(&mut self, s: &SummaryStats) -> Result<(), IoError> {
        self.text("summary.json", &summary_json(s, self.hash))?;
        let mut t = ResultTable::unitless(&s.outcome_columns)?;
        t.rows = s.outcomes.clone();
        self.table("outcomes", &t)
    }

    fn manifest(mut self, manifest: &RunManifest) -> Result<Vec<PathBuf>, IoError> {
        let mut m = manifest.clone();
        self.outputs.push(PathBuf::from("manifest.json"));
        m.outputs = self.outputs.clone();
        let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
        text.push('\n');
        table::write_file(&self.dir.join("manifest.json"), &text)?;
        Ok(self.outputs)
    }
}

/// Runs the manifest's command, writing artifacts under `out_dir`.
pub fn run_command(manifest: &RunManifest, out_dir: &Path) -> Result<RunOutcome, IoError> {
    let mut em = Emitter {
        dir: out_dir,
        hash: manifest.config_hash,
        outputs: Vec::new(),
    };
    let mut outcome = match manifest.command {
        Command::Simulate => simulate(manifest, &mut em)?,
        Command::Probe => probe(manifest, &mut em)?,
        Command::Verify => verify(manifest, &mut em)?,
        Command::Experiment | Command::Report => {
            let report = manifest.command == Command::Report;
            match &manifest.config.experiment {
                Some(ExperimentSpec::All { configs }) => run_all(manifest, configs, out_dir, &mut em)?,
                Some(_) => experiment(manifest, &mut em, report)?,
                None => trajectory_report(manifest, &mut em)?,
            }
        }
    };
    if manifest.command == Command::Report {
        em.text("digest.txt", &outcome.digest)?;
    }
    outcome.outputs = em.manifest(manifest)?;
    Ok(outcome)
}

fn sim_horizon(h: HorizonSpec) -> Horizon<'static> {
    match h.kind {
        HorizonKind::Time => Horizon::Time(h.value),
        HorizonKind::Jumps => Horizon::Jumps(h.value as u64),
    }
}

fn one_trajectory(manifest: &RunManifest, checkpoints: Vec<f64>) -> Result<(ResolvedGraph, SimConfig, Trajectory), IoError> {
    let g = manifest.graph()?;
    let cfg = manifest.sim_config(&g)?;
    let mut state = init_sim(cfg.clone())?;
    let opts = RunOptions {
        checkpoints,
        record_events: true,
    };
    let traj = run_with(&mut state, sim_horizon(manifest.horizon()?), &opts)?;
    Ok((g, cfg, traj))
}

fn vertex_columns(prefix: &str, g: &ResolvedGraph) -> Vec<String> {
    g.labels.iter().map(|l| format!("{prefix}{l}")).collect()
}

fn simulate(manifest: &RunManifest, em: &mut Emitter) -> Result<RunOutcome, IoError> {
    let checkpoints = manifest.config.simulate.as_ref().map(|s| s.checkpoints.clone()).unwrap_or_default();
    let (g, _, traj) = one_trajectory(manifest, checkpoints)?;
    let mut jumps = ResultTable::new(&[
        ("n", ""),
        ("time", "time"),
        ("from", "vertex"),
        ("to", "vertex"),
        ("holding", "time"),
    ])?;
    for e in &traj.events {
        jumps.push(vec![
            e.index as f64,
            e.time,
            g.labels[e.from] as f64,
            g.labels[e.to] as f64,
            e.holding,
        ])?;
    }
    em.table("jumps", &jumps)?;
    let mut cols = vec!["time".to_string()];
    cols.extend(vertex_columns("L_", &g));
    let mut cps = ResultTable::unitless(&cols)?;
    for c in &traj.checkpoints {
        cps.push(std::iter::once(c.time).chain(c.local_times.iter().copied()).collect())?;
    }
    em.table("checkpoints", &cps)?;
    let digest = format!(
        "simulate: {} jumps, end time {}, final vertex {}\n",
        traj.events.len(),
        traj.end_time,
        g.labels[traj.final_vertex]
    );
    Ok(RunOutcome {
        pass: true,
        digest,
        ..RunOutcome::default()
    })
}

fn probe(manifest: &RunManifest, em: &mut Emitter) -> Result<RunOutcome, IoError> {
    let spec = manifest.config.probe.as_ref().ok_or(ConfigError::MissingKey { path: "probe".into() })?;
    let (g, cfg, traj) = one_trajectory(manifest, Vec::new())?;
    let i = g.vertex(spec.i, "probe.i")?;
    let j = g.vertex(spec.j, "probe.j")?;
    let grid: Vec<f64> = (1..=spec.points)
        .map(|k| traj.end_time * k as f64 / spec.points as f64)
        .collect();
    let opts = ProbeOptions {
        fast_path: spec.fast_path,
        audit_fraction: spec.audit_fraction,
        audit_seed: cfg.seed,
        derivative_audit: spec.derivative_audit,
        ..ProbeOptions::default()
    };
    let rec = decompose_trajectory(&traj, &g.graph, &cfg.w, i, j, &grid, &opts)?;
    let mut t = ResultTable::unitless(&ProbeRecord::COLUMNS)?;
    t.rows = rec.rows().iter().map(|r| r.to_vec()).collect();
    em.table("probe", &t)?;
    let a = &rec.audit;
    let digest = format!(
        "probe ({}, {}) over [0, {}]: {} samples, final Z = {}, M = {}, <M> = {}\n  \
         fast-path audits {} (max delta {:e}), derivative audits {} (identity {:e}, fd {:e})\n",
        spec.i,
        spec.j,
        traj.end_time,
        grid.len(),
        rec.z.last().copied().unwrap_or(f64::NAN),
        rec.m.last().copied().unwrap_or(f64::NAN),
        rec.bracket.last().copied().unwrap_or(f64::NAN),
        a.fast_path_checks,
        a.fast_path_max_delta,
        a.derivative_checks,
        a.identity_max_delta,
        a.finite_difference_max_delta,
    );
    Ok(RunOutcome {
        pass: true,
        digest,
        ..RunOutcome::default()
    })
}

/// Suite options and suite names from the `verify` block, defaults otherwise.
pub fn suite_options(manifest: &RunManifest) -> (SuiteOptions, Vec<String>) {
    let d = SuiteOptions::default();
    let seed = manifest.config.seed.unwrap_or(d.seed);
    match &manifest.config.verify {
        Some(v) => (
            SuiteOptions {
                max_vertices: v.max_vertices as usize,
                alphas: v.alphas.clone(),
                z_draws: v.z_draws as usize,
                z_range: v.z_range,
                bound_instances: v.bound_instances as usize,
                law_replicates: v.law_replicates as usize,
                conservation_jumps: v.conservation_jumps,
                seed,
            },
            v.suites.clone(),
        ),
        None => (
            SuiteOptions { seed, ..d },
            crate::verify::SUITES.iter().map(|s| s.to_string()).collect(),
        ),
    }
}

fn verify(manifest: &RunManifest, em: &mut Emitter) -> Result<RunOutcome, IoError> {
    let (opts, suites) = suite_options(manifest);
    let mut reports = Vec::new();
    let mut digest = String::new();
    for name in &suites {
        let r = run_suite(name, &opts)?;
        writeln!(
            digest,
            "[{}] {} ({} instances, {:.1} s)",
            if r.pass { "PASS" } else { "FAIL" },
            r.suite,
            r.instances,
            r.seconds
        )
        .expect("writing to a String");
        for m in &r.metrics {
            let bound = match (m.max, m.min) {
                (Some(max), _) => format!(" (<= {max:e})"),
                (_, Some(min)) => format!(" (>= {min:e})"),
                _ => String::new(),
            };
            writeln!(digest, "  {} = {:e}{}", m.name, m.value, bound).expect("writing to a String");
        }
        for f in &r.failures {
            writeln!(digest, "  ! {f}").expect("writing to a String");
        }
        reports.push(r);
    }
    #[derive(Serialize)]
    struct Doc<'a> {
        manifest: String,
        reports: &'a [CriterionReport],
    }
    let mut text = serde_json::to_string_pretty(&Doc {
        manifest: format!("{:016x}", em.hash),
        reports: &reports,
    })
    .expect("reports serialize");
    text.push('\n');
    em.text("verify.json", &text)?;
    Ok(RunOutcome {
        pass: reports.iter().all(|r| r.pass),
        reports,
        digest,
        ..RunOutcome::default()
    })
}

/// Builds and runs the experiment named in the manifest.
pub fn run_experiment(manifest: &RunManifest) -> Result<SummaryStats, IoError> {
    use experiments::*;
    let spec = manifest
        .config
        .experiment
        .as_ref()
        .ok_or(ConfigError::MissingKey { path: "experiment".into() })?;
    let sim = || -> Result<(ResolvedGraph, SimConfig), IoError> {
        let g = manifest.graph()?;
        let cfg = manifest.sim_config(&g)?;
        Ok((g, cfg))
    };
    let s = match spec {
        ExperimentSpec::Localization {
            share_min,
            stall_max,
            pass_fraction,
        } => localization_experiment(&LocalizationConfig {
            sim: sim()?.1,
            replicas: manifest.replicas()?,
            horizon: manifest.horizon()?.value,
            share_min: *share_min,
            stall_max: *stall_max,
            pass_fraction: *pass_fraction,
        })?,
        ExperimentSpec::FiniteRange {
            shells,
            median_ratio_bounds,
        } => finite_range_experiment(&FiniteRangeConfig {
            sim: sim()?.1,
            replicas: manifest.replicas()?,
            jumps: manifest.horizon()?.value as u64,
            shells: *shells,
            median_ratio_bounds: *median_ratio_bounds,
        })?,
        ExperimentSpec::Cutset {
            cutset,
            target,
            max_replicas,
            max_jumps,
            u_grid,
            se_multiplier,
        } => {
            let (g, sim) = sim()?;
            cutset_tail_experiment(&CutsetConfig {
                sim,
                cutset: g.vertices(cutset, "experiment.cutset")?,
                target: g.vertices(target, "experiment.target")?,
                min_conditioned: manifest.replicas()?,
                max_replicas: *max_replicas as usize,
                max_jumps: *max_jumps,
                u_grid: u_grid.clone(),
                se_multiplier: *se_multiplier,
            })?
        }
        ExperimentSpec::Rubin {
            c,
            lambda,
            y_grid,
            se_multiplier,
        } => rubin_sum_experiment(&RubinConfig {
            w: manifest.w()?,
            c: *c,
            lambda: *lambda,
            samples: manifest.replicas()?,
            y_grid: y_grid.clone(),
            seed: manifest.seed()?,
            se_multiplier: *se_multiplier,
        })?,
        ExperimentSpec::GammaSequence {
            alpha,
            nu,
            p,
            q,
            a0,
            r,
            iterations,
            growth_tolerance,
        } => gamma_sequence(&GammaSequenceConfig {
            alpha: *alpha,
            nu: *nu,
            p: *p,
            q: *q,
            a0: *a0,
            r: r.map_or(RSequence::Zero, |r| RSequence::Power {
                scale: r.scale,
                exponent: r.exponent,
            }),
            iterations: *iterations,
            growth_tolerance: *growth_tolerance,
        })?,
        ExperimentSpec::Trap { jumps, z } => trap_probability(&TrapConfig {
            sim: sim()?.1,
            replicas: manifest.replicas()?,
            jumps: *jumps,
            z: *z,
        })?,
        ExperimentSpec::MartingaleEnsemble { i, j } => {
            let (g, sim) = sim()?;
            let seed = sim.seed;
            martingale_ensemble_experiment(&MartingaleConfig {
                sim,
                i: g.vertex(*i, "experiment.i")?,
                j: g.vertex(*j, "experiment.j")?,
                horizon: manifest.horizon()?.value,
                replicas: manifest.replicas()?,
                probe: ProbeOptions {
                    audit_seed: seed,
                    ..ProbeOptions::default()
                },
            })?
        }
        ExperimentSpec::All { .. } => {
            return Err(ConfigError::Invalid {
                path: "experiment.kind".into(),
                message: "a suite of configs cannot be run as one experiment".into(),
            }
            .into())
        }
    };
    Ok(s)
}

fn experiment(manifest: &RunManifest, em: &mut Emitter, report: bool) -> Result<RunOutcome, IoError> {
    let s = run_experiment(manifest)?;
    em.summary(&s)?;
    if report {
        plot_tables(manifest, &s, em)?;
    }
    Ok(RunOutcome {
        pass: s.pass(),
        digest: summary_digest(&s),
        summaries: vec![s],
        ..RunOutcome::default()
    })
}

/// Plot-ready curves derived from a summary.
fn plot_tables(manifest: &RunManifest, s: &SummaryStats, em: &mut Emitter) -> Result<(), IoError> {
    let points = manifest.config.report.as_ref().map_or(200, |r| r.points);
    match manifest.config.experiment {
        Some(ExperimentSpec::Cutset { .. }) => {
            let gains: Vec<f64> = s.outcomes.iter().map(|r| r[0]).collect();
            let rate = s.get("w_ell_star").map_or(f64::NAN, |e| e.value);
            let top = gains.iter().copied().fold(0.0, f64::max);
            let mut t = ResultTable::new(&[("u", "time"), ("survival", ""), ("bound", "")])?;
            for k in 0..points {
                let u = top * k as f64 / (points - 1) as f64;
                let surv = gains.iter().filter(|&&g| g > u).count() as f64 / gains.len().max(1) as f64;
                t.push(vec![u, surv, (-rate * u).exp()])?;
            }
            em.table("survival", &t)?;
        }
        Some(ExperimentSpec::FiniteRange { shells, .. }) => {
            let mut t = ResultTable::unitless(&["k", "p_hat", "se"])?;
            for k in 0..=shells {
                let e = s
                    .get(&format!("p_hat_T{}", 3 * k))
                    .ok_or_else(|| IoError::Table(format!("missing shell {k}")))?;
                t.push(vec![f64::from(3 * k), e.value, e.se.unwrap_or(f64::NAN)])?;
            }
            em.table("shells", &t)?;
        }
        Some(ExperimentSpec::Localization { .. }) => {
            let mut shares: Vec<f64> = s.outcomes.iter().map(|r| r[1]).collect();
            shares.sort_by(f64::total_cmp);
            let n = shares.len() as f64;
            let mut t = ResultTable::unitless(&["share", "empirical_cdf"])?;
            for (k, &x) in shares.iter().enumerate() {
                t.push(vec![x, (k + 1) as f64 / n])?;
            }
            em.table("share_cdf", &t)?;
        }
        _ => {}
    }
    Ok(())
}

/// Local-time and occupation-share curves of one trajectory.
fn trajectory_report(manifest: &RunManifest, em: &mut Emitter) -> Result<RunOutcome, IoError> {
    let points = manifest.config.report.as_ref().map_or(200, |r| r.points);
    let (g, cfg, traj) = one_trajectory(manifest, Vec::new())?;
    let mut l_cols = vec!["t".to_string()];
    l_cols.extend(vertex_columns("L_", &g));
    let mut s_cols = vec!["t".to_string()];
    s_cols.extend(vertex_columns("share_", &g));
    let mut lt = ResultTable::unitless(&l_cols)?;
    let mut sh = ResultTable::unitless(&s_cols)?;
    for k in 0..points {
        let t = traj.start_time + (traj.end_time - traj.start_time) * k as f64 / (points - 1) as f64;
        let l = traj.local_times_at(t)?;
        lt.push(std::iter::once(t).chain(l.iter().copied()).collect())?;
        if t > 0.0 {
            let shares = l.iter().zip(&cfg.initial_local_times).map(|(x, e)| (x - e) / t);
            sh.push(std::iter::once(t).chain(shares).collect())?;
        }
    }
    em.table("local_times", &lt)?;
    em.table("shares", &sh)?;

    let active_share = manifest.config.report.as_ref().map_or(0.01, |r| r.active_share);
    let grid: Vec<f64> = (1..points)
        .map(|k| traj.start_time + (traj.end_time - traj.start_time) * k as f64 / (points - 1) as f64)
        .map(|t| t.min(traj.end_time))
        .collect();
    let traces = ratio_traces(&traj, &g.graph, &cfg.w, &grid, active_share)?;
    let mut rt = ResultTable::new(&[
        ("t", "time"),
        ("neighborhood_min", ""),
        ("cluster_ratio", ""),
        ("adjacent_weight_share", ""),
        ("distance_two_weight_share", ""),
    ])?;
    for r in &traces.rows {
        rt.push(vec![
            r.t,
            r.neighborhood_min,
            r.cluster_ratio,
            r.adjacent_weight_share,
            r.distance_two_weight_share,
        ])?;
    }
    em.table("ratio_traces", &rt)?;
    let dominant = (0..g.graph.vertex_count())
        .max_by(|&a, &b| traj.final_local_times[a].total_cmp(&traj.final_local_times[b]))
        .unwrap_or(0);
    let digest = format!(
        "trajectory: {} jumps, end time {}, dominant vertex {} with local time {}\n",
        traj.events.len(),
        traj.end_time,
        g.labels[dominant],
        traj.final_local_times[dominant]
    ) + &format!(
        "active set {:?} in {} cluster(s)\n",
        traces.active.iter().map(|&v| g.labels[v]).collect::<Vec<_>>(),
        traces.clusters.len()
    );
    Ok(RunOutcome {
        pass: true,
        digest,
        ..RunOutcome::default()
    })
}

/// Runs every config of a suite into its own subdirectory.
fn run_all(manifest: &RunManifest, configs: &[String], out_dir: &Path, em: &mut Emitter) -> Result<RunOutcome, IoError> {
    let mut outcome = RunOutcome {
        pass: true,
        ..RunOutcome::default()
    };
    let mut index = ResultTable::unitless(&["entry", "pass"])?;
    for (k, file) in configs.iter().enumerate() {
        let path = manifest.base_dir.join(file);
        let nest = |e: IoError| IoError::Nested {
            path: path.clone(),
            source: Box::new(e),
        };
        let child = parse_config_file(&path, manifest.command, Overrides::default()).map_err(nest)?;
        if matches!(child.config.experiment, Some(ExperimentSpec::All { .. })) {
            return Err(nest(
                ConfigError::Invalid {
                    path: "experiment.kind".into(),
                    message: "suites may not nest".into(),
                }
                .into(),
            ));
        }
        let stem = Path::new(file)
            .file_stem()
            .map_or_else(|| format!("entry{k}"), |s| s.to_string_lossy().into_owned());
        let sub = run_command(&child, &out_dir.join(&stem)).map_err(nest)?;
        writeln!(outcome.digest, "== {stem}\n{}", sub.digest).expect("writing to a String");
        index.push(vec![k as f64, f64::from(u8::from(sub.pass))])?;
        outcome.pass &= sub.pass;
        em.outputs.extend(sub.outputs.iter().map(|p| Path::new(&stem).join(p)));
        outcome.summaries.extend(sub.summaries);
    }
    em.table("suite", &index)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    const LOCALIZATION: &str = r#"{
        "graph": {"family": "path", "params": [5]},
        "w": {"coefficient": 1, "exponent": 3},
        "seed": 7,
        "horizon": {"kind": "time", "value": 1e4},
        "replicas": 200,
        "experiment": {"kind": "localization", "share_min": 0.9, "stall_max": 1e-3, "pass_fraction": 0.95}
    }"#;

    #[test]
    fn minimal_localization_config() {
        let m = parse_config(LOCALIZATION, Command::Experiment).unwrap();
        assert_eq!(m.config.mode, crate::sim::ClockMode::Gillespie);
        assert_eq!(m.config.initial_local_times, InitialLocalTimes::Uniform(1.0));
        assert_eq!(m.seed, Some(7));
        let g = m.graph().unwrap();
        let sim = m.sim_config(&g).unwrap();
        assert_eq!(sim.initial_local_times, vec![1.0; 5]);
        assert_eq!(sim.w, ReinforcementSpec::power(3.0));
    }

    #[test]
    fn unknown_key_hint() {
        let text = LOCALIZATION.replace("\"coefficient\"", "\"kappa\"");
        let err = parse_config(&text, Command::Experiment).unwrap_err();
        match err {
            IoError::Config(ConfigError::UnknownKey { path, hint }) => {
                assert_eq!(path, "w.kappa");
                assert_eq!(hint.as_deref(), Some("use w.coefficient"));
            }
            other => panic!("{other:?}"),
        }
        let text = LOCALIZATION.replace("\"seed\"", "\"sed\"");
        let err = parse_config(&text, Command::Experiment).unwrap_err();
        assert!(err.to_string().contains("use seed"), "{err}");
    }

    #[test]
    fn reordered_keys_hash_equal() {
        let a = parse_config(LOCALIZATION, Command::Experiment).unwrap();
        let b = parse_config(
            r#"{"replicas": 200, "experiment": {"pass_fraction": 0.95, "stall_max": 0.001,
                "share_min": 0.9, "kind": "localization"},
                "horizon": {"value": 10000, "kind": "time"}, "seed": 7,
                "w": {"exponent": 3, "coefficient": 1.0}, "graph": {"params": [5], "family": "path"}}"#,
            Command::Experiment,
        )
        .unwrap();
        assert_eq!(a.config_hash, b.config_hash);
        let c = parse_config(&LOCALIZATION.replace("\"seed\": 7", "\"seed\": 8"), Command::Experiment).unwrap();
        assert_ne!(a.config_hash, c.config_hash);
    }

    #[test]
    fn path_errors() {
        let missing = LOCALIZATION.replace("\"share_min\": 0.9, ", "");
        assert!(matches!(
            parse_config(&missing, Command::Experiment),
            Err(IoError::Config(ConfigError::MissingKey { path })) if path == "experiment.share_min"
        ));
        let typed = LOCALIZATION.replace("\"seed\": 7", "\"seed\": \"seven\"");
        assert!(matches!(
            parse_config(&typed, Command::Experiment),
            Err(IoError::Config(ConfigError::TypeError { path, .. })) if path == "seed"
        ));
        let zero = LOCALIZATION.replace("\"replicas\": 200", "\"replicas\": 0");
        let err = parse_config(&zero, Command::Experiment).unwrap_err();
        assert!(err.is_config());
        assert!(err.to_json().contains("\"path\":\"replicas\""));
        let wrong = LOCALIZATION.replace("\"kind\": \"time\"", "\"kind\": \"jumps\"");
        assert!(parse_config(&wrong, Command::Experiment).is_err());
    }

    #[test]
    fn overrides_change_the_hash() {
        let base = parse_config(LOCALIZATION, Command::Experiment).unwrap();
        let o = Overrides {
            seed: Some(9),
            replicas: Some(10),
        };
        let m = parse_config_in(LOCALIZATION, Command::Experiment, o, Path::new(".")).unwrap();
        assert_eq!(m.seed, Some(9));
        assert_eq!(m.config.replicas, Some(10));
        assert_ne!(m.config_hash, base.config_hash);
    }

    #[test]
    fn per_vertex_local_times_and_labels() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("g.edges"), "10 20\n20 30\n").unwrap();
        let text = r#"{"graph": {"file": "g.edges"}, "w": {"exponent": 2}, "seed": 1,
            "initial_local_times": {"20": 2.5}, "start_vertex": 30,
            "horizon": {"kind": "jumps", "value": 5}}"#;
        let m = parse_config_in(text, Command::Simulate, Overrides::default(), dir.path()).unwrap();
        let g = m.graph().unwrap();
        assert_eq!(g.labels, vec![10, 20, 30]);
        let sim = m.sim_config(&g).unwrap();
        assert_eq!(sim.initial_local_times, vec![1.0, 2.5, 1.0]);
        assert_eq!(sim.start_vertex, 2);
        let bad = text.replace("\"start_vertex\": 30", "\"start_vertex\": 3");
        let m = parse_config_in(&bad, Command::Simulate, Overrides::default(), dir.path()).unwrap();
        assert!(m.sim_config(&m.graph().unwrap()).is_err());
    }

    #[test]
    fn canonical_json_sorts_nested_keys() {
        let v: Value = serde_json::from_str(r#"{"b": {"y": 1, "x": [2, {"q": 1, "p": 0}]}, "a": null}"#).unwrap();
        assert_eq!(canonical_json(&v), r#"{"a":null,"b":{"x":[2,{"p":0,"q":1}],"y":1}}"#);
    }

    #[test]
    fn simulate_with_zero_jumps_writes_an_empty_log() {
        let dir = tempfile::tempdir().unwrap();
        let m = parse_config(
            r#"{"graph": {"family": "path", "params": [3]}, "w": {"exponent": 2}, "seed": 1,
                "horizon": {"kind": "jumps", "value": 0}}"#,
            Command::Simulate,
        )
        .unwrap();
        let out = run_command(&m, dir.path()).unwrap();
        assert!(out.pass);
        let text = std::fs::read_to_string(dir.path().join("jumps.csv")).unwrap();
        let (hash, table) = ResultTable::from_csv(&text).unwrap();
        assert_eq!(hash, m.config_hash);
        assert!(table.rows.is_empty());
        assert!(dir.path().join("manifest.json").exists());
    }
}
