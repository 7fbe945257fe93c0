//! Finite simple connected graphs with dense vertex ids.
//!
//! Vertex ids are always `0..vertex_count`. Distances are computed by
//! breadth-first search and memoized per source vertex; the cache is a
//! vector of [`OnceLock`]s so a shared `&Graph` can be queried from many
//! replicas at once.

use std::collections::{HashMap, VecDeque};
use std::fmt;
use std::sync::OnceLock;

use itertools::Itertools;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

/// Dense vertex index in `0..|V|`.
pub type VertexId = usize;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum GraphError {
    #[error("line {line}: loop edge {vertex}-{vertex} is not allowed")]
    LoopEdge { line: usize, vertex: u64 },
    #[error("graph is disconnected (line {line} starts a second component)")]
    Disconnected { line: usize },
    #[error("graph has no edges")]
    EmptyGraph,
    #[error("line {line}: {message}")]
    ParseError { line: usize, message: String },
    #[error("vertex {0} is not in the graph")]
    InvalidVertex(VertexId),
    #[error("unknown graph family `{0}` (expected path, cycle, complete, star or torus2d)")]
    UnknownFamily(String),
    #[error("bad parameters for `{family}`: {reason}")]
    BadParams { family: String, reason: String },
}

/// A directed edge of the graph's induced directed edge set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DirectedEdge {
    pub from: VertexId,
    pub to: VertexId,
}

pub struct Graph {
    adjacency: Vec<Vec<VertexId>>,
    max_degree: usize,
    edge_count: usize,
    distances: Vec<OnceLock<Vec<u32>>>,
}

impl Clone for Graph {
    fn clone(&self) -> Self {
        Graph::from_adjacency_unchecked(self.adjacency.clone())
    }
}

impl PartialEq for Graph {
    fn eq(&self, other: &Self) -> bool {
        self.adjacency == other.adjacency
    }
}

impl Eq for Graph {}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("vertex_count", &self.vertex_count())
            .field("edge_count", &self.edge_count)
            .field("max_degree", &self.max_degree)
            .field("adjacency", &self.adjacency)
            .finish()
    }
}

impl Graph {
    fn from_adjacency_unchecked(mut adjacency: Vec<Vec<VertexId>>) -> Self {
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
            nbrs.dedup();
        }
        let max_degree = adjacency.iter().map(Vec::len).max().unwrap_or(0);
        let edge_count = adjacency.iter().map(Vec::len).sum::<usize>() / 2;
        let distances = (0..adjacency.len()).map(|_| OnceLock::new()).collect();
        Graph {
            adjacency,
            max_degree,
            edge_count,
            distances,
        }
    }

    /// Builds a validated graph from an undirected edge list over `0..n`.
    pub fn from_edges(n: usize, edges: &[(VertexId, VertexId)]) -> Result<Self, GraphError> {
        if n == 0 || edges.is_empty() {
            return Err(GraphError::EmptyGraph);
        }
        let mut adjacency = vec![Vec::new(); n];
        for (idx, &(u, v)) in edges.iter().enumerate() {
            if u >= n {
                return Err(GraphError::InvalidVertex(u));
            }
            if v >= n {
                return Err(GraphError::InvalidVertex(v));
            }
            if u == v {
                return Err(GraphError::LoopEdge {
                    line: idx + 1,
                    vertex: u as u64,
                });
            }
            adjacency[u].push(v);
            adjacency[v].push(u);
        }
        let g = Graph::from_adjacency_unchecked(adjacency);
        if let Some(v) = g.first_unreached_vertex() {
            let line = edges
                .iter()
                .position(|&(a, b)| a == v || b == v)
                .map_or(0, |p| p + 1);
            return Err(GraphError::Disconnected { line });
        }
        Ok(g)
    }

    fn first_unreached_vertex(&self) -> Option<VertexId> {
        let d = self.bfs(0);
        d.iter().position(|&x| x == u32::MAX)
    }

    pub fn vertex_count(&self) -> usize {
        self.adjacency.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_count
    }

    pub fn max_degree(&self) -> usize {
        self.max_degree
    }

    pub fn neighbors(&self, v: VertexId) -> &[VertexId] {
        &self.adjacency[v]
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.adjacency[v].len()
    }

    pub fn is_adjacent(&self, u: VertexId, v: VertexId) -> bool {
        self.adjacency[u].binary_search(&v).is_ok()
    }

    /// Undirected edges as `(u, v)` with `u < v`, lexicographically sorted.
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut out = Vec::with_capacity(self.edge_count);
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            for &v in nbrs {
                if u < v {
                    out.push((u, v));
                }
            }
        }
        out
    }

    pub fn directed_edges(&self) -> impl Iterator<Item = DirectedEdge> + '_ {
        self.adjacency
            .iter()
            .enumerate()
            .flat_map(|(u, nbrs)| nbrs.iter().map(move |&v| DirectedEdge { from: u, to: v }))
    }

    /// Stable integer key of a directed edge, `from * |V| + to`.
    pub fn edge_key(&self, from: VertexId, to: VertexId) -> u64 {
        (from * self.vertex_count() + to) as u64
    }

    fn check(&self, v: VertexId) -> Result<(), GraphError> {
        if v < self.vertex_count() {
            Ok(())
        } else {
            Err(GraphError::InvalidVertex(v))
        }
    }

    fn bfs(&self, source: VertexId) -> Vec<u32> {
        let mut dist = vec![u32::MAX; self.vertex_count()];
        let mut queue = VecDeque::new();
        dist[source] = 0;
        queue.push_back(source);
        while let Some(u) = queue.pop_front() {
            for &v in &self.adjacency[u] {
                if dist[v] == u32::MAX {
                    dist[v] = dist[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        dist
    }

    /// Distances from `source` to every vertex (memoized).
    pub fn distances_from(&self, source: VertexId) -> Result<&[u32], GraphError> {
        self.check(source)?;
        Ok(self.distances[source].get_or_init(|| self.bfs(source)))
    }

    pub fn distance(&self, x: VertexId, y: VertexId) -> Result<u32, GraphError> {
        self.check(y)?;
        Ok(self.distances_from(x)?[y])
    }

    /// `({y : δ(x,y) ≤ r}, {y : δ(x,y) = r + 1})`, both sorted.
    pub fn ball_with_boundary(
        &self,
        x: VertexId,
        r: u32,
    ) -> Result<(Vec<VertexId>, Vec<VertexId>), GraphError> {
        let d = self.distances_from(x)?;
        let ball = (0..d.len()).filter(|&y| d[y] <= r).collect();
        let boundary = (0..d.len()).filter(|&y| d[y] == r + 1).collect();
        Ok((ball, boundary))
    }

    pub fn eccentricity(&self, x: VertexId) -> Result<u32, GraphError> {
        Ok(*self.distances_from(x)?.iter().max().unwrap_or(&0))
    }

    pub fn diameter(&self) -> u32 {
        (0..self.vertex_count())
            .map(|v| self.eccentricity(v).unwrap_or(0))
            .max()
            .unwrap_or(0)
    }

    /// Applies a vertex relabeling `v -> perm[v]`.
    pub fn relabel(&self, perm: &[VertexId]) -> Graph {
        assert_eq!(perm.len(), self.vertex_count());
        let mut adjacency = vec![Vec::new(); self.vertex_count()];
        for (u, nbrs) in self.adjacency.iter().enumerate() {
            adjacency[perm[u]] = nbrs.iter().map(|&v| perm[v]).collect();
        }
        Graph::from_adjacency_unchecked(adjacency)
    }

    /// Serializes to the edge-list text format accepted by [`load_graph`].
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        for (u, v) in self.edges() {
            out.push_str(&format!("{u} {v}\n"));
        }
        out
    }
}

/// Parses edge-list text: one `u v` pair per line, `#` starts a comment.
///
/// If the ids used are exactly `0..n` they are kept; otherwise they are
/// compacted to `0..n` in order of first appearance.
pub fn load_graph(text: &str) -> Result<Graph, GraphError> {
    load_graph_labeled(text).map(|(g, _)| g)
}

/// [`load_graph`] plus the external label of every dense id.
pub fn load_graph_labeled(text: &str) -> Result<(Graph, Vec<u64>), GraphError> {
    let mut raw_edges: Vec<(u64, u64, usize)> = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let content = line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let fields: Vec<&str> = content.split_whitespace().collect();
        if fields.len() != 2 {
            return Err(GraphError::ParseError {
                line: lineno,
                message: format!("expected two vertex ids, found {}", fields.len()),
            });
        }
        let parse = |s: &str| {
            s.parse::<u64>().map_err(|e| GraphError::ParseError {
                line: lineno,
                message: format!("`{s}` is not a non-negative integer: {e}"),
            })
        };
        let u = parse(fields[0])?;
        let v = parse(fields[1])?;
        if u == v {
            return Err(GraphError::LoopEdge {
                line: lineno,
                vertex: u,
            });
        }
        raw_edges.push((u, v, lineno));
    }
    if raw_edges.is_empty() {
        return Err(GraphError::EmptyGraph);
    }

    let mut order: Vec<u64> = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::new();
    for &(u, v, _) in &raw_edges {
        for x in [u, v] {
            if !seen.contains_key(&x) {
                seen.insert(x, order.len());
                order.push(x);
            }
        }
    }
    let n = order.len();
    let dense = order.iter().all(|&x| (x as usize) < n);
    let id = |x: u64| if dense { x as usize } else { seen[&x] };

    let mut adjacency = vec![Vec::new(); n];
    for &(u, v, _) in &raw_edges {
        adjacency[id(u)].push(id(v));
        adjacency[id(v)].push(id(u));
    }
    let g = Graph::from_adjacency_unchecked(adjacency);
    if let Some(v) = g.first_unreached_vertex() {
        let line = raw_edges
            .iter()
            .find(|&&(a, b, _)| id(a) == v || id(b) == v)
            .map_or(0, |e| e.2);
        return Err(GraphError::Disconnected { line });
    }
    let labels = if dense { (0..n as u64).collect() } else { order };
    Ok((g, labels))
}

fn bad(family: &str, reason: impl Into<String>) -> GraphError {
    GraphError::BadParams {
        family: family.to_string(),
        reason: reason.into(),
    }
}

/// Builds one of the named experiment families.
///
/// * `path [n]`: vertices `0..n` in a line, endpoints `0` and `n-1`.
/// * `cycle [n]`: `i ~ i+1 mod n`, `n >= 3`.
/// * `complete [n]`: `K_n`, `n >= 2`.
/// * `star [m]`: center `0` with leaves `1..=m`.
/// * `torus2d [rows, cols]`: row-major `r * cols + c`, both sides `>= 3`.
pub fn make_named_graph(family: &str, params: &[usize]) -> Result<Graph, GraphError> {
    let one = |min: usize| -> Result<usize, GraphError> {
        match params {
            [n] if *n >= min => Ok(*n),
            [n] => Err(bad(family, format!("size {n} is below the minimum {min}"))),
            _ => Err(bad(family, "expected exactly one size parameter")),
        }
    };
    let mut edges = Vec::new();
    let n = match family {
        "path" => {
            let n = one(2)?;
            edges.extend((0..n - 1).map(|i| (i, i + 1)));
            n
        }
        "cycle" => {
            let n = one(3)?;
            edges.extend((0..n).map(|i| (i, (i + 1) % n)));
            n
        }
        "complete" => {
            let n = one(2)?;
            for u in 0..n {
                for v in u + 1..n {
                    edges.push((u, v));
                }
            }
            n
        }
        "star" => {
            let m = one(1)?;
            edges.extend((1..=m).map(|leaf| (0, leaf)));
            m + 1
        }
        "torus2d" => {
            let (rows, cols) = match params {
                [r, c] if *r >= 3 && *c >= 3 => (*r, *c),
                [_, _] => return Err(bad(family, "both sides must be at least 3")),
                _ => return Err(bad(family, "expected [rows, cols]")),
            };
            for r in 0..rows {
                for c in 0..cols {
                    let v = r * cols + c;
                    edges.push((v, r * cols + (c + 1) % cols));
                    edges.push((v, ((r + 1) % rows) * cols + c));
                }
            }
            rows * cols
        }
        other => return Err(GraphError::UnknownFamily(other.to_string())),
    };
    Graph::from_edges(n, &edges)
}

/// Seeded random connected graph: a uniform random recursive tree plus
/// each remaining pair independently with probability `extra_edge_prob`.
pub fn random_connected_graph(n: usize, extra_edge_prob: f64, seed: u64) -> Graph {
    assert!(n >= 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut edges = Vec::new();
    for idx in 1..n {
        let parent = order[rng.random_range(0..idx)];
        edges.push((order[idx], parent));
    }
    for u in 0..n {
        for v in u + 1..n {
            let present = edges.iter().any(|&(a, b)| (a, b) == (u, v) || (a, b) == (v, u));
            if !present && rng.random::<f64>() < extra_edge_prob {
                edges.push((u, v));
            }
        }
    }
    Graph::from_edges(n, &edges).expect("random tree plus edges is connected")
}

/// All connected simple graphs with `min_n..=max_n` vertices, one per
/// isomorphism class, named `n{n}-{canonical edge mask in hex}`.
///
/// Brute force over edge subsets with canonical form the least edge mask
/// over all vertex permutations; intended for `max_n <= 6`.
pub fn connected_graph_catalogue(min_n: usize, max_n: usize) -> Vec<(String, Graph)> {
    assert!(max_n <= 7, "catalogue enumeration is exponential");
    let mut out = Vec::new();
    for n in min_n.max(1)..=max_n {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        let mut index = vec![vec![0usize; n]; n];
        for (b, &(u, v)) in pairs.iter().enumerate() {
            index[u][v] = b;
            index[v][u] = b;
        }
        let perms: Vec<Vec<usize>> = (0..n).permutations(n).collect();
        let mut seen = std::collections::BTreeSet::new();
        for mask in 0u32..(1u32 << pairs.len()) {
            if !mask_connected(n, &pairs, mask) {
                continue;
            }
            let canonical = perms
                .iter()
                .map(|p| {
                    pairs
                        .iter()
                        .enumerate()
                        .filter(|(b, _)| mask >> b & 1 == 1)
                        .fold(0u32, |acc, (_, &(u, v))| acc | 1 << index[p[u]][p[v]])
                })
                .min()
                .unwrap_or(0);
            if seen.insert(canonical) {
                let edges: Vec<(usize, usize)> = pairs
                    .iter()
                    .enumerate()
                    .filter(|(b, _)| canonical >> b & 1 == 1)
                    .map(|(_, &e)| e)
                    .collect();
                let g = if n == 1 {
                    Graph::from_adjacency_unchecked(vec![Vec::new()])
                } else {
                    Graph::from_edges(n, &edges).expect("connected by construction")
                };
                out.push((format!("n{n}-{canonical:x}"), g));
            }
        }
    }
    out
}

fn mask_connected(n: usize, pairs: &[(usize, usize)], mask: u32) -> bool {
    let mut reached = 1u32;
    loop {
        let before = reached;
        for (b, &(u, v)) in pairs.iter().enumerate() {
            if mask >> b & 1 == 1 && (reached >> u & 1 == 1 || reached >> v & 1 == 1) {
                reached |= 1 << u | 1 << v;
            }
        }
        if reached == before {
            return reached.count_ones() as usize == n;
        }
    }
}
