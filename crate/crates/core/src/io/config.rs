//! Typed lab configuration parsed from JSON with path-aware errors.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{Map, Value};

use super::ConfigError;
use crate::sim::ClockMode;
use crate::verify::SUITES;

/// Misspellings and synonyms with a fixed suggestion, keyed by node path.
const ALIASES: &[(&str, &str, &str)] = &[
    ("w", "kappa", "coefficient"),
    ("w", "scale", "coefficient"),
    ("w", "c", "coefficient"),
    ("w", "alpha", "exponent"),
    ("w", "power", "exponent"),
    ("", "ell", "initial_local_times"),
    ("", "local_times", "initial_local_times"),
    ("", "start", "start_vertex"),
    ("", "root", "start_vertex"),
    ("", "clock", "mode"),
    ("", "n_replicas", "replicas"),
    ("", "samples", "replicas"),
    ("", "T", "horizon"),
];

const SIMILARITY: f64 = 0.8;

fn join(path: &str, key: &str) -> String {
    if path.is_empty() {
        key.to_string()
    } else {
        format!("{path}.{key}")
    }
}

fn describe(v: &Value) -> String {
    match v {
        Value::Null => "null".into(),
        Value::Bool(_) => "a boolean".into(),
        Value::Number(n) => format!("the number {n}"),
        Value::String(s) => format!("the string {s:?}"),
        Value::Array(_) => "an array".into(),
        Value::Object(_) => "an object".into(),
    }
}

fn type_error(path: &str, expected: &str, found: &Value) -> ConfigError {
    ConfigError::TypeError {
        path: path.to_string(),
        expected: expected.to_string(),
        found: describe(found),
    }
}

fn as_f64(path: &str, v: &Value) -> Result<f64, ConfigError> {
    v.as_f64().ok_or_else(|| type_error(path, "a number", v))
}

/// Accepts integers written as `100000` or `1e5`.
fn as_u64(path: &str, v: &Value) -> Result<u64, ConfigError> {
    if let Some(x) = v.as_u64() {
        return Ok(x);
    }
    match v.as_f64() {
        Some(x) if x >= 0.0 && x.fract() == 0.0 && x < 2f64.powi(63) => Ok(x as u64),
        _ => Err(type_error(path, "a non-negative integer", v)),
    }
}

fn as_list<T>(path: &str, v: &Value, item: impl Fn(&str, &Value) -> Result<T, ConfigError>) -> Result<Vec<T>, ConfigError> {
    let arr = v.as_array().ok_or_else(|| type_error(path, "an array", v))?;
    arr.iter()
        .enumerate()
        .map(|(k, x)| item(&format!("{path}[{k}]"), x))
        .collect()
}

/// One JSON object being consumed key by key.
struct Node {
    map: Map<String, Value>,
    path: String,
    known: &'static [&'static str],
}

impl Node {
    fn new(path: &str, v: Value, known: &'static [&'static str]) -> Result<Self, ConfigError> {
        match v {
            Value::Object(map) => Ok(Node {
                map,
                path: path.to_string(),
                known,
            }),
            other => Err(type_error(path, "an object", &other)),
        }
    }

    fn at(&self, key: &str) -> String {
        join(&self.path, key)
    }

    fn take(&mut self, key: &str) -> Option<Value> {
        self.map.remove(key)
    }

    fn need(&mut self, key: &str) -> Result<Value, ConfigError> {
        self.take(key).ok_or_else(|| ConfigError::MissingKey { path: self.at(key) })
    }

    fn f64(&mut self, key: &str) -> Result<f64, ConfigError> {
        let v = self.need(key)?;
        as_f64(&self.at(key), &v)
    }

    fn f64_or(&mut self, key: &str, default: f64) -> Result<f64, ConfigError> {
        match self.take(key) {
            Some(v) => as_f64(&self.at(key), &v),
            None => Ok(default),
        }
    }

    fn u64(&mut self, key: &str) -> Result<u64, ConfigError> {
        let v = self.need(key)?;
        as_u64(&self.at(key), &v)
    }

    fn u64_opt(&mut self, key: &str) -> Result<Option<u64>, ConfigError> {
        self.take(key).map(|v| as_u64(&self.at(key), &v)).transpose()
    }

    fn bool_or(&mut self, key: &str, default: bool) -> Result<bool, ConfigError> {
        match self.take(key) {
            Some(Value::Bool(b)) => Ok(b),
            Some(v) => Err(type_error(&self.at(key), "a boolean", &v)),
            None => Ok(default),
        }
    }

    fn string(&mut self, key: &str) -> Result<String, ConfigError> {
        match self.need(key)? {
            Value::String(s) => Ok(s),
            v => Err(type_error(&self.at(key), "a string", &v)),
        }
    }

    fn f64_list(&mut self, key: &str) -> Result<Vec<f64>, ConfigError> {
        let v = self.need(key)?;
        as_list(&self.at(key), &v, as_f64)
    }

    fn u64_list(&mut self, key: &str) -> Result<Vec<u64>, ConfigError> {
        let v = self.need(key)?;
        as_list(&self.at(key), &v, as_u64)
    }

    fn pair(&mut self, key: &str) -> Result<(f64, f64), ConfigError> {
        let path = self.at(key);
        match self.f64_list(key)?.as_slice() {
            &[a, b] => Ok((a, b)),
            _ => Err(ConfigError::Invalid {
                path,
                message: "expected exactly two numbers".into(),
            }),
        }
    }

    /// Rejects the first key left unconsumed, suggesting a known key.
    fn finish(self) -> Result<(), ConfigError> {
        let Some(key) = self.map.keys().next() else {
            return Ok(());
        };
        let alias = ALIASES
            .iter()
            .find(|(node, from, to)| *node == self.path && *from == key && self.known.contains(to))
            .map(|(_, _, to)| *to);
        let similar = || {
            self.known
                .iter()
                .map(|k| (strsim::jaro_winkler(key, k), *k))
                .filter(|(s, _)| *s >= SIMILARITY)
                .max_by(|a, b| a.0.total_cmp(&b.0))
                .map(|(_, k)| k)
        };
        Err(ConfigError::UnknownKey {
            path: join(&self.path, key),
            hint: alias.or_else(similar).map(|k| format!("use {}", join(&self.path, k))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum GraphSource {
    Family { family: String, params: Vec<u64> },
    /// Edge-list file; `digest` pins its content.
    File { file: String, digest: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WSpec {
    pub coefficient: f64,
    pub exponent: f64,
    pub floor: f64,
}

/// Initial local times: one value for every vertex, or a map from vertex
/// label to value with unlisted vertices at 1.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum InitialLocalTimes {
    Uniform(f64),
    PerVertex(BTreeMap<u64, f64>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum HorizonKind {
    Time,
    Jumps,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HorizonSpec {
    pub kind: HorizonKind,
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerR {
    pub scale: f64,
    pub exponent: f64,
}

/// Experiment block, selected by `experiment.kind`. Replica counts come
/// from the top-level `replicas` key.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExperimentSpec {
    Localization {
        share_min: f64,
        stall_max: f64,
        pass_fraction: f64,
    },
    FiniteRange {
        shells: u32,
        median_ratio_bounds: (f64, f64),
    },
    /// `replicas` is the number of conditioned replicas required.
    Cutset {
        cutset: Vec<u64>,
        target: Vec<u64>,
        max_replicas: u64,
        max_jumps: u64,
        u_grid: Vec<f64>,
        se_multiplier: f64,
    },
    /// `replicas` is the number of samples.
    Rubin {
        c: f64,
        lambda: f64,
        y_grid: Vec<f64>,
        se_multiplier: f64,
    },
    GammaSequence {
        alpha: f64,
        nu: f64,
        p: f64,
        q: f64,
        a0: f64,
        r: Option<PowerR>,
        iterations: u64,
        growth_tolerance: f64,
    },
    Trap {
        jumps: u64,
        z: f64,
    },
    MartingaleEnsemble {
        i: u64,
        j: u64,
    },
    /// Runs every listed experiment config, paths relative to this file.
    All {
        configs: Vec<String>,
    },
}

impl ExperimentSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentSpec::Localization { .. } => "localization",
            ExperimentSpec::FiniteRange { .. } => "finite_range",
            ExperimentSpec::Cutset { .. } => "cutset",
            ExperimentSpec::Rubin { .. } => "rubin",
            ExperimentSpec::GammaSequence { .. } => "gamma_sequence",
            ExperimentSpec::Trap { .. } => "trap",
            ExperimentSpec::MartingaleEnsemble { .. } => "martingale_ensemble",
            ExperimentSpec::All { .. } => "all",
        }
    }

    fn needs(&self) -> Needs {
        use ExperimentSpec::*;
        match self {
            Localization { .. } | MartingaleEnsemble { .. } => Needs::sim(Some(HorizonKind::Time)),
            FiniteRange { .. } => Needs::sim(Some(HorizonKind::Jumps)),
            Cutset { .. } | Trap { .. } => Needs::sim(None),
            Rubin { .. } => Needs {
                graph: false,
                w: true,
                seed: true,
                horizon: None,
                replicas: true,
            },
            GammaSequence { .. } | All { .. } => Needs::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeSpec {
    pub i: u64,
    pub j: u64,
    /// Number of equally spaced sample times on `(0, T]`.
    pub points: u64,
    pub fast_path: bool,
    pub audit_fraction: f64,
    pub derivative_audit: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateSpec {
    pub checkpoints: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifySpec {
    pub suites: Vec<String>,
    pub max_vertices: u64,
    pub alphas: Vec<f64>,
    pub z_draws: u64,
    pub z_range: (f64, f64),
    pub bound_instances: u64,
    pub law_replicates: u64,
    pub conservation_jumps: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportSpec {
    /// Sample times of the trajectory curves.
    pub points: u64,
    /// Minimum second-half gain share for a vertex to count as active in
    /// the ratio traces.
    pub active_share: f64,
}

/// Validated configuration with defaults applied.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LabConfig {
    pub graph: Option<GraphSource>,
    pub w: Option<WSpec>,
    pub initial_local_times: InitialLocalTimes,
    pub start_vertex: u64,
    pub seed: Option<u64>,
    pub mode: ClockMode,
    pub horizon: Option<HorizonSpec>,
    pub replicas: Option<u64>,
    pub experiment: Option<ExperimentSpec>,
    pub probe: Option<ProbeSpec>,
    pub simulate: Option<SimulateSpec>,
    pub verify: Option<VerifySpec>,
    pub report: Option<ReportSpec>,
}

const TOP_KEYS: &[&str] = &[
    "graph",
    "w",
    "initial_local_times",
    "start_vertex",
    "seed",
    "mode",
    "horizon",
    "replicas",
    "experiment",
    "probe",
    "simulate",
    "verify",
    "report",
];

#[derive(Debug, Clone, Copy, Default)]
struct Needs {
    graph: bool,
    w: bool,
    seed: bool,
    horizon: Option<HorizonKind>,
    replicas: bool,
}

impl Needs {
    fn sim(horizon: Option<HorizonKind>) -> Self {
        Needs {
            graph: true,
            w: true,
            seed: true,
            horizon,
            replicas: true,
        }
    }
}

fn invalid(path: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        path: path.to_string(),
        message: message.into(),
    }
}

fn parse_graph(node: Value, read_file: &dyn Fn(&str) -> Result<String, ConfigError>) -> Result<GraphSource, ConfigError> {
    let mut g = Node::new("graph", node, &["family", "params", "file"])?;
    let source = if let Some(file) = g.take("file") {
        let Value::String(file) = file else {
            return Err(type_error("graph.file", "a string", &file));
        };
        let text = read_file(&file)?;
        GraphSource::File {
            file,
            digest: format!("{:016x}", crate::seeding::digest64(text.as_bytes())),
        }
    } else {
        let family = g.string("family")?;
        let params = match g.take("params") {
            Some(v) => as_list("graph.params", &v, as_u64)?,
            None => Vec::new(),
        };
        GraphSource::Family { family, params }
    };
    g.finish()?;
    Ok(source)
}

fn parse_w(node: Value) -> Result<WSpec, ConfigError> {
    let mut w = Node::new("w", node, &["coefficient", "exponent", "floor"])?;
    let spec = WSpec {
        coefficient: w.f64_or("coefficient", 1.0)?,
        exponent: w.f64("exponent")?,
        floor: w.f64_or("floor", 1.0)?,
    };
    w.finish()?;
    crate::reinforcement::ReinforcementSpec::new(spec.coefficient, spec.exponent, spec.floor)
        .map_err(|e| invalid("w", e.to_string()))?;
    Ok(spec)
}

fn parse_initial(v: Value) -> Result<InitialLocalTimes, ConfigError> {
    const PATH: &str = "initial_local_times";
    let check = |path: &str, x: f64| {
        if x > 0.0 && x.is_finite() {
            Ok(x)
        } else {
            Err(invalid(path, format!("local times must be positive and finite, got {x}")))
        }
    };
    match v {
        Value::Number(_) => Ok(InitialLocalTimes::Uniform(check(PATH, as_f64(PATH, &v)?)?)),
        Value::Object(map) => {
            let mut out = BTreeMap::new();
            for (key, x) in map {
                let path = join(PATH, &key);
                let label: u64 = key
                    .parse()
                    .map_err(|_| invalid(&path, "vertex labels must be non-negative integers"))?;
                out.insert(label, check(&path, as_f64(&path, &x)?)?);
            }
            Ok(InitialLocalTimes::PerVertex(out))
        }
        other => Err(type_error(PATH, "a number or a map from vertex to number", &other)),
    }
}

fn parse_mode(v: Value) -> Result<ClockMode, ConfigError> {
    match v.as_str() {
        Some("gillespie") => Ok(ClockMode::Gillespie),
        Some("paper-clock") | Some("paper_clock") => Ok(ClockMode::PaperClock),
        Some(other) => Err(invalid("mode", format!("expected \"gillespie\" or \"paper-clock\", got {other:?}"))),
        None => Err(type_error("mode", "a string", &v)),
    }
}

fn parse_horizon(v: Value) -> Result<HorizonSpec, ConfigError> {
    let mut h = Node::new("horizon", v, &["kind", "value"])?;
    let kind = match h.string("kind")?.as_str() {
        "time" => HorizonKind::Time,
        "jumps" => HorizonKind::Jumps,
        other => return Err(invalid("horizon.kind", format!("expected \"time\" or \"jumps\", got {other:?}"))),
    };
    let value = match kind {
        HorizonKind::Time => {
            let t = h.f64("value")?;
            if !(t >= 0.0 && t.is_finite()) {
                return Err(invalid("horizon.value", format!("time horizon must be finite and >= 0, got {t}")));
            }
            t
        }
        HorizonKind::Jumps => h.u64("value")? as f64,
    };
    h.finish()?;
    Ok(HorizonSpec { kind, value })
}

fn unit_interval(path: &str, x: f64) -> Result<f64, ConfigError> {
    if x > 0.0 && x < 1.0 {
        Ok(x)
    } else {
        Err(invalid(path, format!("must lie in (0, 1), got {x}")))
    }
}

fn parse_experiment(v: Value) -> Result<ExperimentSpec, ConfigError> {
    let kind = match &v {
        Value::Object(m) => match m.get("kind") {
            Some(Value::String(s)) => s.clone(),
            Some(other) => return Err(type_error("experiment.kind", "a string", other)),
            None => return Err(ConfigError::MissingKey { path: "experiment.kind".into() }),
        },
        other => return Err(type_error("experiment", "an object", other)),
    };
    let known: &'static [&'static str] = match kind.as_str() {
        "localization" => &["kind", "share_min", "stall_max", "pass_fraction"],
        "finite_range" => &["kind", "shells", "median_ratio_bounds"],
        "cutset" => &["kind", "cutset", "target", "max_replicas", "max_jumps", "u_grid", "se_multiplier"],
        "rubin" => &["kind", "c", "lambda", "y_grid", "se_multiplier"],
        "gamma_sequence" => &["kind", "alpha", "nu", "p", "q", "a0", "r", "iterations", "growth_tolerance"],
        "trap" => &["kind", "jumps", "z"],
        "martingale_ensemble" => &["kind", "i", "j"],
        "all" => &["kind", "configs"],
        other => {
            return Err(invalid(
                "experiment.kind",
                format!(
                    "unknown experiment {other:?}; expected one of localization, finite_range, cutset, \
                     rubin, gamma_sequence, trap, martingale_ensemble, all"
                ),
            ))
        }
    };
    let mut e = Node::new("experiment", v, known)?;
    e.take("kind");
    let spec = match kind.as_str() {
        "localization" => ExperimentSpec::Localization {
            share_min: unit_interval("experiment.share_min", e.f64("share_min")?)?,
            stall_max: unit_interval("experiment.stall_max", e.f64("stall_max")?)?,
            pass_fraction: unit_interval("experiment.pass_fraction", e.f64("pass_fraction")?)?,
        },
        "finite_range" => {
            let shells = e.u64("shells")?;
            let shells = u32::try_from(shells).map_err(|_| invalid("experiment.shells", "too large"))?;
            ExperimentSpec::FiniteRange {
                shells,
                median_ratio_bounds: e.pair("median_ratio_bounds")?,
            }
        }
        "cutset" => ExperimentSpec::Cutset {
            cutset: e.u64_list("cutset")?,
            target: e.u64_list("target")?,
            max_replicas: e.u64("max_replicas")?,
            max_jumps: e.u64("max_jumps")?,
            u_grid: e.f64_list("u_grid")?,
            se_multiplier: e.f64_or("se_multiplier", 3.0)?,
        },
        "rubin" => ExperimentSpec::Rubin {
            c: e.f64("c")?,
            lambda: e.f64("lambda")?,
            y_grid: e.f64_list("y_grid")?,
            se_multiplier: e.f64_or("se_multiplier", 3.0)?,
        },
        "gamma_sequence" => {
            let r = match e.take("r") {
                None | Some(Value::Null) => None,
                Some(v) => {
                    let mut r = Node::new("experiment.r", v, &["scale", "exponent"])?;
                    let out = PowerR {
                        scale: r.f64("scale")?,
                        exponent: r.f64("exponent")?,
                    };
                    r.finish()?;
                    Some(out)
                }
            };
            ExperimentSpec::GammaSequence {
                alpha: e.f64("alpha")?,
                nu: e.f64("nu")?,
                p: e.f64("p")?,
                q: e.f64("q")?,
                a0: e.f64("a0")?,
                r,
                iterations: e.u64("iterations")?,
                growth_tolerance: e.f64("growth_tolerance")?,
            }
        }
        "trap" => ExperimentSpec::Trap {
            jumps: e.u64("jumps")?,
            z: e.f64_or("z", 1.96)?,
        },
        "martingale_ensemble" => ExperimentSpec::MartingaleEnsemble {
            i: e.u64("i")?,
            j: e.u64("j")?,
        },
        _ => {
            let v = e.need("configs")?;
            let configs = as_list("experiment.configs", &v, |p, x| match x {
                Value::String(s) => Ok(s.clone()),
                other => Err(type_error(p, "a string", other)),
            })?;
            ExperimentSpec::All { configs }
        }
    };
    e.finish()?;
    Ok(spec)
}

fn parse_probe(v: Value) -> Result<ProbeSpec, ConfigError> {
    let mut p = Node::new(
        "probe",
        v,
        &["i", "j", "points", "fast_path", "audit_fraction", "derivative_audit"],
    )?;
    let spec = ProbeSpec {
        i: p.u64("i")?,
        j: p.u64("j")?,
        points: p.u64_opt("points")?.unwrap_or(100),
        fast_path: p.bool_or("fast_path", true)?,
        audit_fraction: p.f64_or("audit_fraction", 0.01)?,
        derivative_audit: p.bool_or("derivative_audit", false)?,
    };
    p.finish()?;
    if spec.points == 0 {
        return Err(invalid("probe.points", "need at least one sample time"));
    }
    if !(0.0..=1.0).contains(&spec.audit_fraction) {
        return Err(invalid("probe.audit_fraction", "must lie in [0, 1]"));
    }
    Ok(spec)
}

fn parse_simulate(v: Value) -> Result<SimulateSpec, ConfigError> {
    let mut s = Node::new("simulate", v, &["checkpoints"])?;
    let checkpoints = match s.take("checkpoints") {
        Some(v) => as_list("simulate.checkpoints", &v, as_f64)?,
        None => Vec::new(),
    };
    s.finish()?;
    Ok(SimulateSpec { checkpoints })
}

fn parse_verify(v: Value) -> Result<VerifySpec, ConfigError> {
    let d = crate::verify::SuiteOptions::default();
    let mut node = Node::new(
        "verify",
        v,
        &[
            "suites",
            "max_vertices",
            "alphas",
            "z_draws",
            "z_range",
            "bound_instances",
            "law_replicates",
            "conservation_jumps",
        ],
    )?;
    let suites = match node.take("suites") {
        Some(v) => as_list("verify.suites", &v, |p, x| match x.as_str() {
            Some(s) if SUITES.contains(&s) => Ok(s.to_string()),
            Some(s) => Err(invalid(p, format!("unknown suite {s:?}; expected one of {SUITES:?}"))),
            None => Err(type_error(p, "a string", x)),
        })?,
        None => SUITES.iter().map(|s| s.to_string()).collect(),
    };
    let spec = VerifySpec {
        suites,
        max_vertices: node.u64_opt("max_vertices")?.unwrap_or(d.max_vertices as u64),
        alphas: match node.take("alphas") {
            Some(v) => as_list("verify.alphas", &v, as_f64)?,
            None => d.alphas.clone(),
        },
        z_draws: node.u64_opt("z_draws")?.unwrap_or(d.z_draws as u64),
        z_range: if node.map.contains_key("z_range") {
            node.pair("z_range")?
        } else {
            d.z_range
        },
        bound_instances: node.u64_opt("bound_instances")?.unwrap_or(d.bound_instances as u64),
        law_replicates: node.u64_opt("law_replicates")?.unwrap_or(d.law_replicates as u64),
        conservation_jumps: node.u64_opt("conservation_jumps")?.unwrap_or(d.conservation_jumps),
    };
    node.finish()?;
    if !(2..=8).contains(&spec.max_vertices) {
        return Err(invalid("verify.max_vertices", "must lie in 2..=8"));
    }
    Ok(spec)
}

fn parse_report(v: Value) -> Result<ReportSpec, ConfigError> {
    let mut r = Node::new("report", v, &["points", "active_share"])?;
    let points = r.u64_opt("points")?.unwrap_or(200);
    let active_share = r.f64_or("active_share", 0.01)?;
    r.finish()?;
    if points < 2 {
        return Err(invalid("report.points", "need at least two sample times"));
    }
    if !(active_share > 0.0 && active_share <= 1.0) {
        return Err(invalid("report.active_share", "must lie in (0, 1]"));
    }
    Ok(ReportSpec { points, active_share })
}

/// Parses the top-level object. `read_file` resolves `graph.file`.
pub(super) fn parse_lab_config(
    root: Value,
    command: super::Command,
    read_file: &dyn Fn(&str) -> Result<String, ConfigError>,
) -> Result<LabConfig, ConfigError> {
    use super::Command;
    let mut top = Node::new("", root, TOP_KEYS)?;
    let cfg = LabConfig {
        graph: top.take("graph").map(|v| parse_graph(v, read_file)).transpose()?,
        w: top.take("w").map(parse_w).transpose()?,
        initial_local_times: top
            .take("initial_local_times")
            .map(parse_initial)
            .transpose()?
            .unwrap_or(InitialLocalTimes::Uniform(1.0)),
        start_vertex: top.u64_opt("start_vertex")?.unwrap_or(0),
        seed: top.u64_opt("seed")?,
        mode: top.take("mode").map(parse_mode).transpose()?.unwrap_or_default(),
        horizon: top.take("horizon").map(parse_horizon).transpose()?,
        replicas: top.u64_opt("replicas")?,
        experiment: top.take("experiment").map(parse_experiment).transpose()?,
        probe: top.take("probe").map(parse_probe).transpose()?,
        simulate: top.take("simulate").map(parse_simulate).transpose()?,
        verify: top.take("verify").map(parse_verify).transpose()?,
        report: top.take("report").map(parse_report).transpose()?,
    };
    top.finish()?;

    let trajectory = Needs::sim(Some(HorizonKind::Time));
    let needs = match command {
        Command::Simulate => Needs {
            horizon: None,
            replicas: false,
            ..Needs::sim(None)
        },
        Command::Probe => Needs {
            replicas: false,
            ..trajectory
        },
        Command::Verify => Needs::default(),
        Command::Experiment => match &cfg.experiment {
            Some(e) => e.needs(),
            None => return Err(ConfigError::MissingKey { path: "experiment".into() }),
        },
        Command::Report => match &cfg.experiment {
            Some(e) => e.needs(),
            None => Needs {
                replicas: false,
                ..trajectory
            },
        },
    };
    let missing = |path: &str| Err(ConfigError::MissingKey { path: path.into() });
    if needs.graph && cfg.graph.is_none() {
        return missing("graph");
    }
    if needs.w && cfg.w.is_none() {
        return missing("w");
    }
    if needs.seed && cfg.seed.is_none() {
        return missing("seed");
    }
    if command == Command::Simulate && cfg.horizon.is_none() {
        return missing("horizon");
    }
    if let Some(kind) = needs.horizon {
        match cfg.horizon {
            None => return missing("horizon"),
            Some(h) if h.kind != kind => {
                return Err(invalid(
                    "horizon.kind",
                    format!("this command needs a {kind:?} horizon").to_lowercase(),
                ))
            }
            _ => {}
        }
    }
    if needs.replicas {
        match cfg.replicas {
            None => return missing("replicas"),
            Some(0) => return Err(invalid("replicas", "must be at least 1")),
            _ => {}
        }
    }
    if command == Command::Probe && cfg.probe.is_none() {
        return missing("probe");
    }
    Ok(cfg)
}
