//! Spanning-tree and spanning-forest oracles.
//!
//! Forests are enumerated exhaustively by edge inclusion/exclusion. For the
//! weight identities only the vertex partition and the degree sequence of a
//! forest matter, so [`ForestCatalog`] keeps one record per forest and
//! [`ForestSums`] aggregates `∏_v w(z_v)^{deg_F(v)-1}` by partition for one
//! weight vector. Two-component partitions are encoded by the bit mask of
//! the component containing vertex 0.
//!
//! Notation: `𝔗` are unrooted spanning trees, `𝔗_j` trees rooted at `j`,
//! and `𝔗_{A,B}` two-component forests whose first component is rooted at
//! `A[0]` and contains `A`, the second rooted at `B[0]` and containing `B`.
//! A family whose two vertex lists overlap is empty.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, VertexId};
use crate::linalg::{eval_weights, minor, LinalgError, MinorInverse};
use crate::reinforcement::ReinforcementSpec;

/// Largest vertex count accepted by the enumerators.
pub const ENUMERATION_LIMIT: usize = 10;
/// Largest number of parent assignments the directed enumerator will scan.
pub const DIRECTED_ASSIGNMENT_LIMIT: f64 = 2e7;
/// Pass threshold of the matrix-tree reports.
pub const MATRIX_TREE_TOLERANCE: f64 = 1e-9;
/// Entries whose exact value is zero are compared against this fraction of
/// the largest cofactor magnitude.
pub const COFACTOR_ZERO_FLOOR: f64 = 1e-3;
/// Slack allowed by the bound reports.
pub const BOUND_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ForestError {
    #[error("graph has {n} vertices; enumeration is limited to {limit}")]
    TooLarge { n: usize, limit: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),
    #[error("vertex {0} is not in the graph")]
    InvalidVertex(VertexId),
}

fn check_size(n: usize) -> Result<(), ForestError> {
    if n > ENUMERATION_LIMIT {
        Err(ForestError::TooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        })
    } else {
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ForestComponent {
    pub root: VertexId,
    pub members: Vec<VertexId>,
    pub edges: Vec<(VertexId, VertexId)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RootedForest {
    pub components: Vec<ForestComponent>,
}

impl RootedForest {
    pub fn edges(&self) -> Vec<(VertexId, VertexId)> {
        let mut e: Vec<_> = self.components.iter().flat_map(|c| c.edges.iter().copied()).collect();
        e.sort_unstable();
        e
    }

    pub fn degree(&self, v: VertexId) -> usize {
        self.components
            .iter()
            .flat_map(|c| c.edges.iter())
            .filter(|&&(a, b)| a == v || b == v)
            .count()
    }

    fn vertex_count(&self) -> usize {
        self.components.iter().map(|c| c.members.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ForestSpec {
    /// `𝔗`; each tree is reported with root 0.
    UnrootedTrees,
    /// `𝔗_j`.
    RootedTrees(VertexId),
    /// `𝔗_{first, second}`: roots are `first[0]` and `second[0]`.
    TwoComponent {
        first: Vec<VertexId>,
        second: Vec<VertexId>,
    },
}

/// Calls `f(edges, labels)` for every spanning forest with `components`
/// components, in lexicographic order of the sorted edge list. `labels[v]`
/// identifies the component of `v`.
fn for_each_forest<F>(g: &Graph, components: usize, mut f: F)
where
    F: FnMut(&[(VertexId, VertexId)], &[usize]),
{
    let n = g.vertex_count();
    if components == 0 || components > n {
        return;
    }
    let edges = g.edges();
    let need = n - components;
    let mut labels: Vec<usize> = (0..n).collect();
    let mut chosen = Vec::with_capacity(need);
    fn rec<F: FnMut(&[(VertexId, VertexId)], &[usize])>(
        edges: &[(VertexId, VertexId)],
        idx: usize,
        need: usize,
        chosen: &mut Vec<(VertexId, VertexId)>,
        labels: &mut Vec<usize>,
        f: &mut F,
    ) {
        if chosen.len() == need {
            f(chosen, labels);
            return;
        }
        if edges.len() - idx < need - chosen.len() {
            return;
        }
        let (u, v) = edges[idx];
        let (a, b) = (labels[u], labels[v]);
        if a != b {
            let saved = labels.clone();
            for l in labels.iter_mut() {
                if *l == b {
                    *l = a;
                }
            }
            chosen.push((u, v));
            rec(edges, idx + 1, need, chosen, labels, f);
            chosen.pop();
            *labels = saved;
        }
        rec(edges, idx + 1, need, chosen, labels, f);
    }
    rec(&edges, 0, need, &mut chosen, &mut labels, &mut f);
}

fn component_of(labels: &[usize], v: VertexId) -> Vec<VertexId> {
    (0..labels.len()).filter(|&u| labels[u] == labels[v]).collect()
}

/// Exhaustive, duplicate-free enumeration of one forest family.
pub fn enumerate_forests(g: &Graph, spec: &ForestSpec) -> Result<Vec<RootedForest>, ForestError> {
    let n = g.vertex_count();
    check_size(n)?;
    let valid = |v: &VertexId| if *v < n { Ok(()) } else { Err(ForestError::InvalidVertex(*v)) };
    let mut out = Vec::new();
    match spec {
        ForestSpec::UnrootedTrees | ForestSpec::RootedTrees(_) => {
            let root = match spec {
                ForestSpec::RootedTrees(j) => {
                    valid(j)?;
                    *j
                }
                _ => 0,
            };
            for_each_forest(g, 1, |edges, _| {
                out.push(RootedForest {
                    components: vec![ForestComponent {
                        root,
                        members: (0..n).collect(),
                        edges: edges.to_vec(),
                    }],
                });
            });
        }
        ForestSpec::TwoComponent { first, second } => {
            first.iter().chain(second.iter()).try_for_each(valid)?;
            if first.is_empty() || second.is_empty() || first.iter().any(|v| second.contains(v)) {
                return Ok(out);
            }
            let (r1, r2) = (first[0], second[0]);
            for_each_forest(g, 2, |edges, labels| {
                let same = |set: &[VertexId], root: VertexId| set.iter().all(|&v| labels[v] == labels[root]);
                if labels[r1] != labels[r2] && same(first, r1) && same(second, r2) {
                    let split = |root: VertexId| {
                        let members = component_of(labels, root);
                        let edges = edges
                            .iter()
                            .copied()
                            .filter(|&(a, _)| labels[a] == labels[root])
                            .collect();
                        ForestComponent {
                            root,
                            members,
                            edges,
                        }
                    };
                    out.push(RootedForest {
                        components: vec![split(r1), split(r2)],
                    });
                }
            });
        }
    }
    Ok(out)
}

/// `w(T,z) = w(z_root) ∏_v w(z_v)^{deg_T(v)-1}` for a tree, and
/// `w(F,z) = w(z_{r1}) w(z_{r2}) ∏_v w(z_v)^{deg_F(v)-1}` for a two-component forest.
pub fn forest_weight(f: &RootedForest, w: &ReinforcementSpec, z: &[f64]) -> f64 {
    let n = f.vertex_count();
    let mut deg = vec![0i32; n];
    for c in &f.components {
        for &(a, b) in &c.edges {
            deg[a] += 1;
            deg[b] += 1;
        }
    }
    let roots: f64 = f.components.iter().map(|c| w.w(z[c.root])).product();
    let body: f64 = (0..n).map(|v| w.w(z[v]).powi(deg[v] - 1)).product();
    roots * body
}

/// Degree sequences and partitions of every spanning tree and every
/// two-component spanning forest of one graph.
#[derive(Debug, Clone)]
pub struct ForestCatalog {
    n: usize,
    tree_degrees: Vec<u8>,
    two_masks: Vec<u32>,
    two_degrees: Vec<u8>,
}

impl ForestCatalog {
    pub fn new(g: &Graph) -> Result<Self, ForestError> {
        let n = g.vertex_count();
        check_size(n)?;
        let degrees = |edges: &[(VertexId, VertexId)]| {
            let mut d = vec![0u8; n];
            for &(a, b) in edges {
                d[a] += 1;
                d[b] += 1;
            }
            d
        };
        let mut tree_degrees = Vec::new();
        for_each_forest(g, 1, |edges, _| tree_degrees.extend(degrees(edges)));
        let mut two_masks = Vec::new();
        let mut two_degrees = Vec::new();
        for_each_forest(g, 2, |edges, labels| {
            let mask = (0..n)
                .filter(|&v| labels[v] == labels[0])
                .fold(0u32, |m, v| m | (1 << v));
            two_masks.push(mask);
            two_degrees.extend(degrees(edges));
        });
        Ok(ForestCatalog {
            n,
            tree_degrees,
            two_masks,
            two_degrees,
        })
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn tree_count(&self) -> usize {
        self.tree_degrees.len() / self.n.max(1)
    }

    pub fn two_forest_count(&self) -> usize {
        self.two_masks.len()
    }

    /// Aggregates forest weights for per-vertex weights `w(z_v)`.
    pub fn sums(&self, weights: &[f64]) -> ForestSums {
        let n = self.n;
        // pow[v][d] = w_v^{d-1}
        let pow: Vec<Vec<f64>> = weights
            .iter()
            .map(|&w| (0..=n).map(|d| w.powi(d as i32 - 1)).collect())
            .collect();
        let product = |deg: &[u8]| -> f64 { (0..n).map(|v| pow[v][deg[v] as usize]).product() };

        let mut tree_sum = 0.0;
        let mut tree_excess = vec![0.0; n];
        for deg in self.tree_degrees.chunks_exact(n) {
            let p = product(deg);
            tree_sum += p;
            for v in 0..n {
                tree_excess[v] += p * (deg[v] as f64 - 1.0);
            }
        }
        let slots = 1usize << n.saturating_sub(1);
        let mut mask_sum = vec![0.0; slots];
        let mut mask_excess = vec![0.0; slots * n];
        let mut mask_isolated = vec![0.0; slots * n];
        for (m, deg) in self.two_masks.iter().zip(self.two_degrees.chunks_exact(n)) {
            let p = product(deg);
            let slot = (*m >> 1) as usize;
            mask_sum[slot] += p;
            for v in 0..n {
                mask_excess[slot * n + v] += p * (deg[v] as f64 - 1.0);
                if deg[v] == 0 {
                    mask_isolated[slot * n + v] += p;
                }
            }
        }
        ForestSums {
            n,
            weights: weights.to_vec(),
            total_weight: weights.iter().sum(),
            tree_sum,
            tree_excess,
            mask_sum,
            mask_excess,
            mask_isolated,
        }
    }
}

/// Forest-weight aggregates of one catalog at one weight vector.
#[derive(Debug, Clone)]
pub struct ForestSums {
    n: usize,
    pub weights: Vec<f64>,
    pub total_weight: f64,
    /// `Σ_{T∈𝔗} ∏ w^{deg-1}`.
    pub tree_sum: f64,
    tree_excess: Vec<f64>,
    mask_sum: Vec<f64>,
    mask_excess: Vec<f64>,
    mask_isolated: Vec<f64>,
}

fn set_mask(vs: &[VertexId]) -> u32 {
    vs.iter().fold(0u32, |m, &v| m | (1 << v))
}

impl ForestSums {
    /// Sums `value(slot)` over two-component partitions separating `a` from `b`.
    fn split<F: Fn(usize) -> f64>(&self, a: &[VertexId], b: &[VertexId], value: F) -> f64 {
        let (am, bm) = (set_mask(a), set_mask(b));
        if am == 0 || bm == 0 || am & bm != 0 {
            return 0.0;
        }
        let full = (1u32 << self.n) - 1;
        let mut s = 0.0;
        for slot in 0..self.mask_sum.len() {
            let m = ((slot as u32) << 1) | 1;
            let c = full ^ m;
            let fits = (am & !m == 0 && bm & !c == 0) || (am & !c == 0 && bm & !m == 0);
            if fits {
                s += value(slot);
            }
        }
        s
    }

    /// `Σ_{F∈𝔗_{A,B}} ∏_v w(z_v)^{deg_F(v)-1}` (roots do not enter the product).
    pub fn two_component_product_sum(&self, a: &[VertexId], b: &[VertexId]) -> f64 {
        self.split(a, b, |s| self.mask_sum[s])
    }

    /// `Σ_{T∈𝔗_j} w(T,z)`.
    pub fn rooted_tree_weight(&self, j: VertexId) -> f64 {
        self.weights[j] * self.tree_sum
    }

    /// `Σ_{F∈𝔗_{kh,j}} w(F,z)`.
    pub fn rooted_forest_weight(&self, k: VertexId, h: VertexId, j: VertexId) -> f64 {
        let first = if h == k { vec![k] } else { vec![k, h] };
        self.weights[k] * self.weights[j] * self.two_component_product_sum(&first, &[j])
    }

    fn families(i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> [(Vec<VertexId>, Vec<VertexId>); 2] {
        let pair = |a: VertexId, b: VertexId| if a == b { vec![a] } else { vec![a, b] };
        [(pair(j, h), pair(i, k)), (pair(i, h), pair(j, k))]
    }

    /// `N = [Σ_{𝔗_{jh,ik}} − Σ_{𝔗_{ih,jk}}] ∏ w^{deg-1}`.
    fn kappa_numerator(&self, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        let [(a1, b1), (a2, b2)] = Self::families(i, j, h, k);
        self.two_component_product_sum(&a1, &b1) - self.two_component_product_sum(&a2, &b2)
    }

    /// Combinatorial `κ_{i,j,h}(k,z) = W N / Σ_{T∈𝔗} ∏ w^{deg-1}`.
    pub fn kappa(&self, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        self.total_weight * self.kappa_numerator(i, j, h, k) / self.tree_sum
    }

    /// `J(k,z) = Σ_T (deg_T(k) − 1) ∏ w^{deg-1} / Σ_T ∏ w^{deg-1}`.
    pub fn j_factor(&self, k: VertexId) -> f64 {
        self.tree_excess[k] / self.tree_sum
    }

    /// `κ̃_{i,j,h}(k,z)`; the degree-weighted sum runs over every forest of
    /// the two families, including those where `k` is isolated.
    pub fn kappa_tilde(&self, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        self.kappa_tilde_with(i, j, h, k, false)
    }

    /// `κ̃` with the degree-weighted sum restricted to `deg_F(k) ≥ 2`, as
    /// printed. Differs from [`Self::kappa_tilde`] only when `k ∈ {i, j}`.
    pub fn kappa_tilde_restricted(&self, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        self.kappa_tilde_with(i, j, h, k, true)
    }

    fn kappa_tilde_with(&self, i: VertexId, j: VertexId, h: VertexId, k: VertexId, restricted: bool) -> f64 {
        let n = self.n;
        let excess = |slot: usize| {
            let base = self.mask_excess[slot * n + k];
            if restricted {
                // deg 0 contributes −1 to the excess; restriction drops it.
                base + self.mask_isolated[slot * n + k]
            } else {
                base
            }
        };
        let [(a1, b1), (a2, b2)] = Self::families(i, j, h, k);
        let degree_term = self.split(&a1, &b1, excess) - self.split(&a2, &b2, excess);
        (self.weights[k] * self.kappa_numerator(i, j, h, k) + self.total_weight * degree_term) / self.tree_sum
    }

    /// `∂κ_{i,j,h}(k,z)/∂z_k = w'(z_k)/w(z_k) (κ̃ − κ J)`.
    pub fn kappa_derivative(&self, dwk: f64, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        dwk / self.weights[k] * (self.kappa_tilde(i, j, h, k) - self.kappa(i, j, h, k) * self.j_factor(k))
    }

    /// Same identity evaluated with the restricted `κ̃`.
    pub fn kappa_derivative_restricted(&self, dwk: f64, i: VertexId, j: VertexId, h: VertexId, k: VertexId) -> f64 {
        dwk / self.weights[k]
            * (self.kappa_tilde_restricted(i, j, h, k) - self.kappa(i, j, h, k) * self.j_factor(k))
    }
}

/// Matrix route: `κ_{i,j,h}(k,z) = (r^{(i)}_k − r^{(i)}_h) − (r^{(j)}_k − r^{(j)}_h)`
/// with `r^{(a)} = (H^{(a)})^{-1} 1ᵀ` extended by `r^{(a)}_a = 0`.
#[derive(Debug, Clone)]
pub struct KappaMatrix {
    pub i: VertexId,
    pub j: VertexId,
    pub mi: MinorInverse,
    pub mj: MinorInverse,
    pub ri: Vec<f64>,
    pub rj: Vec<f64>,
}

impl KappaMatrix {
    pub fn new(h: &DMatrix<f64>, i: VertexId, j: VertexId) -> Result<Self, LinalgError> {
        Ok(Self::from_minors(MinorInverse::new(h, i)?, MinorInverse::new(h, j)?))
    }

    pub fn from_minors(mi: MinorInverse, mj: MinorInverse) -> Self {
        let ri = mi.row_sums();
        let rj = mj.row_sums();
        KappaMatrix {
            i: mi.anchor,
            j: mj.anchor,
            mi,
            mj,
            ri,
            rj,
        }
    }

    #[inline]
    pub fn kappa(&self, h: VertexId, k: VertexId) -> f64 {
        (self.ri[k] - self.ri[h]) - (self.rj[k] - self.rj[h])
    }

    /// `∂κ_{i,j,h}(k,z)/∂z_k` for every `h`, given `dwk = w'(z_k)`.
    ///
    /// `∂r = −(H^{(a)})^{-1} v` with `v_m = w'(z_k) [m~k] (r_k − r_m)`.
    pub fn kappa_derivatives(&self, g: &Graph, k: VertexId, dwk: f64) -> Vec<f64> {
        let n = self.ri.len();
        let deriv = |m: &MinorInverse, r: &[f64]| {
            let mut v = vec![0.0; n];
            for &u in g.neighbors(k) {
                v[u] = dwk * (r[k] - r[u]);
            }
            v[m.anchor] = 0.0;
            let mut d = m.solve_full(&v);
            d.iter_mut().for_each(|x| *x = -*x);
            d
        };
        let di = deriv(&self.mi, &self.ri);
        let dj = deriv(&self.mj, &self.rj);
        (0..n).map(|h| (di[k] - di[h]) - (dj[k] - dj[h])).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaRoute {
    Matrix,
    Combinatorial,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KappaResult {
    pub value: f64,
    pub route: KappaRoute,
}

fn check_vertices(g: &Graph, vs: &[VertexId]) -> Result<(), ForestError> {
    match vs.iter().find(|&&v| v >= g.vertex_count()) {
        Some(&v) => Err(ForestError::InvalidVertex(v)),
        None => Ok(()),
    }
}

#[allow(clippy::too_many_arguments)]
pub fn kappa_functional(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    i: VertexId,
    j: VertexId,
    h: VertexId,
    k: VertexId,
    route: KappaRoute,
) -> Result<KappaResult, ForestError> {
    check_vertices(g, &[i, j, h, k])?;
    if i == j {
        return Err(ForestError::HypothesisViolated("κ needs i ≠ j".into()));
    }
    let weights = eval_weights(g, w, z)?;
    let value = match route {
        KappaRoute::Matrix => {
            let b = crate::linalg::generator_from_weights(g, &weights);
            KappaMatrix::new(&b.h, i, j)?.kappa(h, k)
        }
        KappaRoute::Combinatorial => ForestCatalog::new(g)?.sums(&weights).kappa(i, j, h, k),
    };
    Ok(KappaResult { value, route })
}

/// `∂κ_{i,j,h}(k,z)/∂z_k` through the forest identity.
#[allow(clippy::too_many_arguments)]
pub fn kappa_derivative(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    i: VertexId,
    j: VertexId,
    h: VertexId,
    k: VertexId,
) -> Result<f64, ForestError> {
    check_vertices(g, &[i, j, h, k])?;
    if i == j {
        return Err(ForestError::HypothesisViolated("κ needs i ≠ j".into()));
    }
    let weights = eval_weights(g, w, z)?;
    let sums = ForestCatalog::new(g)?.sums(&weights);
    Ok(sums.kappa_derivative(w.dw(z[k]), i, j, h, k))
}

/// One identity comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentityCheck {
    pub instance: String,
    pub identity: String,
    pub lhs: f64,
    pub rhs: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub checks: Vec<IdentityCheck>,
    pub max_delta: f64,
    pub pass: bool,
}

impl VerificationReport {
    fn from_checks(checks: Vec<IdentityCheck>, tol: f64) -> Self {
        let max_delta = checks.iter().map(|c| c.delta).fold(0.0, f64::max);
        VerificationReport {
            pass: max_delta <= tol,
            checks,
            max_delta,
        }
    }

    pub fn merge(reports: impl IntoIterator<Item = VerificationReport>, tol: f64) -> Self {
        let checks = reports.into_iter().flat_map(|r| r.checks).collect();
        Self::from_checks(checks, tol)
    }
}

/// Relative difference; when the exact value is zero it is measured
/// against `scale`, the magnitude of the surrounding entries.
fn rel_delta(lhs: f64, rhs: f64, scale: f64) -> f64 {
    (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(scale)
}

fn sign(p: usize) -> f64 {
    if p % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

/// Cofactor matrix `C = det(A) (A^{-1})ᵀ` together with `det(A)`.
fn cofactors(a: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), LinalgError> {
    let lu = a.clone().lu();
    let det = lu.determinant();
    let inv = lu.try_inverse().ok_or(LinalgError::SingularMinor(0))?;
    Ok((det, inv.transpose() * det))
}

/// Matrix-tree identities for `H^{(j)}(z)` of a VRJP generator.
pub fn verify_matrix_tree_vrjp(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    j: VertexId,
    instance: &str,
) -> Result<VerificationReport, ForestError> {
    check_vertices(g, &[j])?;
    let weights = eval_weights(g, w, z)?;
    let sums = ForestCatalog::new(g)?.sums(&weights);
    Ok(verify_vrjp_with(g, &weights, &sums, j, instance)?)
}

pub(crate) fn verify_vrjp_with(
    g: &Graph,
    weights: &[f64],
    sums: &ForestSums,
    j: VertexId,
    instance: &str,
) -> Result<VerificationReport, LinalgError> {
    let n = g.vertex_count();
    let h = crate::linalg::generator_from_weights(g, weights).h;
    let m = minor(&h, j);
    let mut checks = Vec::new();
    let (det, cof) = if n == 1 {
        (1.0, DMatrix::zeros(0, 0))
    } else {
        cofactors(&m)?
    };
    let rhs_det = sign(n - 1) * sums.rooted_tree_weight(j);
    checks.push(IdentityCheck {
        instance: instance.to_string(),
        identity: format!("det H^({j})"),
        lhs: det,
        rhs: rhs_det,
        delta: rel_delta(det, rhs_det, f64::MIN_POSITIVE),
    });
    let labels: Vec<VertexId> = (0..n).filter(|&v| v != j).collect();
    let mut entries = Vec::new();
    for (a, &k) in labels.iter().enumerate() {
        for (b, &hh) in labels.iter().enumerate() {
            let rhs = sign(n) * sums.rooted_forest_weight(k, hh, j);
            entries.push((k, hh, cof[(a, b)], rhs));
        }
    }
    let scale = entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max) * COFACTOR_ZERO_FLOOR;
    for (k, hh, lhs, rhs) in entries {
        checks.push(IdentityCheck {
            instance: instance.to_string(),
            identity: format!("cofactor C^({j})_{{{k},{hh}}}"),
            lhs,
            rhs,
            delta: rel_delta(lhs, rhs, scale.max(f64::MIN_POSITIVE)),
        });
    }
    Ok(VerificationReport::from_checks(checks, MATRIX_TREE_TOLERANCE))
}

/// A weighted digraph on `0..n`; `weight(u, v) = 0` means no arc.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedDigraph {
    n: usize,
    weights: Vec<f64>,
}

impl WeightedDigraph {
    pub fn new(n: usize, arcs: &[(VertexId, VertexId, f64)]) -> Self {
        let mut weights = vec![0.0; n * n];
        for &(u, v, x) in arcs {
            weights[u * n + v] = x;
        }
        WeightedDigraph { n, weights }
    }

    /// Arc `u -> v` of the induced directed graph weighted by `w(z_v)`;
    /// `-H(z)` is its outgoing Laplacian.
    pub fn from_vrjp(g: &Graph, vertex_weights: &[f64]) -> Self {
        let arcs: Vec<_> = g
            .directed_edges()
            .map(|e| (e.from, e.to, vertex_weights[e.to]))
            .collect();
        Self::new(g.vertex_count(), &arcs)
    }

    /// Induced directed graph with independent uniform arc weights in `[lo, hi)`.
    pub fn random_on(g: &Graph, lo: f64, hi: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let arcs: Vec<_> = g
            .directed_edges()
            .map(|e| (e.from, e.to, rng.random_range(lo..hi)))
            .collect();
        Self::new(g.vertex_count(), &arcs)
    }

    pub fn vertex_count(&self) -> usize {
        self.n
    }

    pub fn weight(&self, u: VertexId, v: VertexId) -> f64 {
        self.weights[u * self.n + v]
    }

    /// Outgoing Laplacian: `L_uv = −w(u,v)`, `L_uu = Σ_k w(u,k)`.
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.n;
        DMatrix::from_fn(n, n, |u, v| {
            if u == v {
                (0..n).map(|k| self.weight(u, k)).sum()
            } else {
                -self.weight(u, v)
            }
        })
    }
}

/// In-tree and two-root in-forest weight sums of a weighted digraph.
#[derive(Debug, Clone)]
pub struct InForestSums {
    n: usize,
    /// `Σ_{T∈𝔗⃗_r} w(T)` per root `r`.
    pub trees: Vec<f64>,
    /// `[k][i][h]`: `Σ_{F∈𝔗⃗_{kh,i}} w(F)`.
    two: Vec<f64>,
}

impl InForestSums {
    pub fn tree(&self, root: VertexId) -> f64 {
        self.trees[root]
    }

    /// `Σ_{F∈𝔗⃗_{kh,i}} w(F)`, zero when `i ∈ {k, h}`.
    pub fn two_root(&self, k: VertexId, h: VertexId, i: VertexId) -> f64 {
        if i == k || i == h {
            return 0.0;
        }
        let n = self.n;
        self.two[(k * n + i) * n + h]
    }
}

/// Enumerates every parent assignment (a vertex either is a root or picks
/// one out-neighbor) and keeps the acyclic ones with one or two roots.
pub fn enumerate_in_forests(dg: &WeightedDigraph) -> Result<InForestSums, ForestError> {
    let n = dg.n;
    check_size(n)?;
    let options: Vec<Vec<Option<VertexId>>> = (0..n)
        .map(|u| {
            std::iter::once(None)
                .chain((0..n).filter(|&v| dg.weight(u, v) > 0.0).map(Some))
                .collect()
        })
        .collect();
    let assignments: f64 = options.iter().map(|o| o.len() as f64).product();
    if assignments > DIRECTED_ASSIGNMENT_LIMIT {
        return Err(ForestError::TooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut sums = InForestSums {
        n,
        trees: vec![0.0; n],
        two: vec![0.0; n * n * n],
    };
    let mut parent = vec![None; n];
    fn rec(
        v: usize,
        roots: usize,
        weight: f64,
        dg: &WeightedDigraph,
        options: &[Vec<Option<VertexId>>],
        parent: &mut Vec<Option<VertexId>>,
        sums: &mut InForestSums,
    ) {
        let n = dg.n;
        if v == n {
            if roots == 0 {
                return;
            }
            let mut root_of = vec![usize::MAX; n];
            for s in 0..n {
                let mut u = s;
                let mut steps = 0;
                while let Some(p) = parent[u] {
                    u = p;
                    steps += 1;
                    if steps > n {
                        return;
                    }
                }
                root_of[s] = u;
            }
            let rs: Vec<usize> = (0..n).filter(|&u| parent[u].is_none()).collect();
            if rs.len() == 1 {
                sums.trees[rs[0]] += weight;
            } else {
                let (a, b) = (rs[0], rs[1]);
                for h in 0..n {
                    let (k, i) = if root_of[h] == a { (a, b) } else { (b, a) };
                    sums.two[(k * n + i) * n + h] += weight;
                }
            }
            return;
        }
        for &opt in &options[v] {
            match opt {
                None => {
                    if roots == 2 {
                        continue;
                    }
                    parent[v] = None;
                    rec(v + 1, roots + 1, weight, dg, options, parent, sums);
                }
                Some(p) => {
                    parent[v] = Some(p);
                    rec(v + 1, roots, weight * dg.weight(v, p), dg, options, parent, sums);
                }
            }
        }
        parent[v] = None;
    }
    rec(0, 0, 1.0, dg, &options, &mut parent, &mut sums);
    Ok(sums)
}

/// Directed matrix-tree identities for `L(i,j)` (row `i`, column `j` removed).
pub fn verify_matrix_tree_directed(
    dg: &WeightedDigraph,
    i: VertexId,
    j: VertexId,
    instance: &str,
) -> Result<VerificationReport, ForestError> {
    let sums = enumerate_in_forests(dg)?;
    Ok(verify_directed_with(dg, &sums, i, j, instance)?)
}

pub(crate) fn verify_directed_with(
    dg: &WeightedDigraph,
    sums: &InForestSums,
    i: VertexId,
    j: VertexId,
    instance: &str,
) -> Result<VerificationReport, LinalgError> {
    let n = dg.n;
    let l = dg.laplacian();
    let m = l.clone().remove_row(i).remove_column(j);
    let (det, cof) = cofactors(&m)?;
    let s = sign(i + j);
    let rhs_det = s * sums.tree(i);
    let mut checks = vec![IdentityCheck {
        instance: instance.to_string(),
        identity: format!("det L({i},{j})"),
        lhs: det,
        rhs: rhs_det,
        delta: rel_delta(det, rhs_det, f64::MIN_POSITIVE),
    }];
    let rows: Vec<VertexId> = (0..n).filter(|&v| v != i).collect();
    let cols: Vec<VertexId> = (0..n).filter(|&v| v != j).collect();
    let mut entries = Vec::new();
    for (a, &k) in rows.iter().enumerate() {
        for (b, &h) in cols.iter().enumerate() {
            let rhs = s * (sums.two_root(k, h, i) - sums.two_root(k, j, i));
            entries.push((k, h, cof[(a, b)], rhs));
        }
    }
    let scale = entries.iter().map(|e| e.3.abs()).fold(0.0, f64::max) * COFACTOR_ZERO_FLOOR;
    for (k, h, lhs, rhs) in entries {
        checks.push(IdentityCheck {
            instance: instance.to_string(),
            identity: format!("cofactor C_{{{k},{h}}}({i},{j})"),
            lhs,
            rhs,
            delta: rel_delta(lhs, rhs, scale.max(f64::MIN_POSITIVE)),
        });
    }
    Ok(VerificationReport::from_checks(checks, MATRIX_TREE_TOLERANCE))
}

/// Runs every `det`/cofactor identity of both matrix-tree forms on one
/// instance: all anchors `j` for `H^{(j)}`, all `(i, j)` for the digraph.
pub fn verify_matrix_tree_all(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    directed: &WeightedDigraph,
    instance: &str,
) -> Result<VerificationReport, ForestError> {
    let n = g.vertex_count();
    let weights = eval_weights(g, w, z)?;
    let sums = ForestCatalog::new(g)?.sums(&weights);
    let in_sums = enumerate_in_forests(directed)?;
    let mut reports = Vec::new();
    for j in 0..n {
        reports.push(verify_vrjp_with(g, &weights, &sums, j, instance)?);
    }
    for i in 0..n {
        for j in 0..n {
            reports.push(verify_directed_with(directed, &in_sums, i, j, instance)?);
        }
    }
    Ok(VerificationReport::merge(reports, MATRIX_TREE_TOLERANCE))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundLemma {
    /// Adjacent pairs: upper bound, lower bound at `(h,k) = (j,i)`, derivative bound.
    Adjacent,
    /// Pairs at distance two with neighborhood weight at most `gamma`.
    DistanceTwo { gamma: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lemma: BoundLemma,
    pub checked: usize,
    pub violations: usize,
    /// Smallest `(bound − value) / bound` seen over all checked inequalities.
    pub worst_slack: f64,
    /// Empirical constants for the inequalities whose constant is not
    /// explicit: `max |κ| (w_i ∧ w_j) / W` and the derivative analogue.
    pub fitted_upper: f64,
    pub fitted_derivative: f64,
    pub pass: bool,
}

struct BoundTally {
    checked: usize,
    violations: usize,
    worst: f64,
}

impl BoundTally {
    /// Records `value ≤ bound`.
    fn le(&mut self, value: f64, bound: f64) {
        self.checked += 1;
        let slack = (bound - value) / bound.abs().max(f64::MIN_POSITIVE);
        self.worst = self.worst.min(slack);
        if slack < -BOUND_TOLERANCE {
            self.violations += 1;
        }
    }
}

/// Checks the κ bound inequalities on every applicable tuple.
///
/// `pairs = None` uses all ordered pairs satisfying the lemma's hypothesis;
/// explicitly supplied pairs that violate it are an error.
pub fn verify_kappa_bounds(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
    lemma: BoundLemma,
    pairs: Option<&[(VertexId, VertexId)]>,
) -> Result<BoundReport, ForestError> {
    let n = g.vertex_count();
    let weights = eval_weights(g, w, z)?;
    let dweights: Vec<f64> = z.iter().map(|&x| w.dw(x)).collect();
    let total: f64 = weights.iter().sum();
    let bundle = crate::linalg::generator_from_weights(g, &weights);
    let d = g.max_degree() as f64;

    let wanted = |i: VertexId, j: VertexId| -> Result<bool, ForestError> {
        let dist = g.distance(i, j).map_err(|_| ForestError::InvalidVertex(i.max(j)))?;
        Ok(match lemma {
            BoundLemma::Adjacent => dist == 1,
            BoundLemma::DistanceTwo { .. } => dist == 2,
        })
    };
    let pair_list: Vec<(VertexId, VertexId)> = match pairs {
        Some(p) => {
            for &(i, j) in p {
                check_vertices(g, &[i, j])?;
                if !wanted(i, j)? {
                    return Err(ForestError::HypothesisViolated(format!(
                        "pair ({i},{j}) is at distance {} but the bound needs {}",
                        g.distance(i, j).unwrap_or(u32::MAX),
                        if matches!(lemma, BoundLemma::Adjacent) { 1 } else { 2 }
                    )));
                }
            }
            p.to_vec()
        }
        None => {
            let mut v = Vec::new();
            for i in 0..n {
                for j in 0..n {
                    if i != j && wanted(i, j)? {
                        v.push((i, j));
                    }
                }
            }
            v
        }
    };

    let mut tally = BoundTally {
        checked: 0,
        violations: 0,
        worst: f64::INFINITY,
    };
    let mut fitted_upper: f64 = 0.0;
    let mut fitted_derivative: f64 = 0.0;
    for (i, j) in pair_list {
        let km = KappaMatrix::new(&bundle.h, i, j)?;
        let (wi, wj) = (weights[i], weights[j]);
        match lemma {
            BoundLemma::Adjacent => {
                let upper = 2.0 * total / (wi * wj);
                for k in 0..n {
                    let dk = km.kappa_derivatives(g, k, dweights[k]);
                    let dbound = 4.0 * d * dweights[k] * total / (weights[k] * wi * wj);
                    for &h in g.neighbors(k) {
                        tally.le(km.kappa(h, k).abs(), upper);
                        tally.le(dk[h].abs(), dbound);
                    }
                }
                let nj: f64 = g.neighbors(j).iter().map(|&s| weights[s]).sum();
                let lower = total / (wj * nj);
                tally.le(lower, km.kappa(j, i).abs());
            }
            BoundLemma::DistanceTwo { gamma } => {
                let mut nbhd: Vec<VertexId> = g.neighbors(i).iter().chain(g.neighbors(j)).copied().collect();
                nbhd.sort_unstable();
                nbhd.dedup();
                let s: f64 = nbhd.iter().map(|&v| weights[v]).sum();
                if s > gamma {
                    return Err(ForestError::HypothesisViolated(format!(
                        "neighborhood weight {s} of ({i},{j}) exceeds gamma = {gamma}"
                    )));
                }
                let lhs: f64 = g.neighbors(i).iter().map(|&h| km.kappa(h, i).abs()).sum();
                tally.le(total / (gamma * wi), lhs);
                let denom = total / wi.min(wj);
                for k in 0..n {
                    let dk = km.kappa_derivatives(g, k, dweights[k]);
                    for &h in g.neighbors(k) {
                        fitted_upper = fitted_upper.max(km.kappa(h, k).abs() / denom);
                        let scale = dweights[k] / weights[k] * denom;
                        if scale > 0.0 {
                            fitted_derivative = fitted_derivative.max(dk[h].abs() / scale);
                        }
                    }
                }
            }
        }
    }
    Ok(BoundReport {
        lemma,
        checked: tally.checked,
        violations: tally.violations,
        worst_slack: tally.worst,
        fitted_upper,
        fitted_derivative,
        pass: tally.violations == 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_named_graph, random_connected_graph};
    use crate::linalg::build_generator;
    use approx::assert_relative_eq;

    fn sq() -> ReinforcementSpec {
        ReinforcementSpec::power(2.0)
    }

    #[test]
    fn cayley_counts() {
        let k3 = make_named_graph("complete", &[3]).unwrap();
        assert_eq!(enumerate_forests(&k3, &ForestSpec::UnrootedTrees).unwrap().len(), 3);
        let k4 = make_named_graph("complete", &[4]).unwrap();
        assert_eq!(enumerate_forests(&k4, &ForestSpec::UnrootedTrees).unwrap().len(), 16);
        assert_eq!(ForestCatalog::new(&k4).unwrap().tree_count(), 16);
        let k5 = make_named_graph("complete", &[5]).unwrap();
        assert_eq!(ForestCatalog::new(&k5).unwrap().tree_count(), 125);
    }

    #[test]
    fn infeasible_two_component_family_is_empty() {
        let p3 = make_named_graph("path", &[3]).unwrap();
        let spec = ForestSpec::TwoComponent {
            first: vec![0, 2],
            second: vec![1],
        };
        assert!(enumerate_forests(&p3, &spec).unwrap().is_empty());
    }

    #[test]
    fn enumeration_is_canonical_and_duplicate_free() {
        let g = random_connected_graph(6, 0.5, 1);
        let trees = enumerate_forests(&g, &ForestSpec::UnrootedTrees).unwrap();
        let lists: Vec<_> = trees.iter().map(RootedForest::edges).collect();
        let mut sorted = lists.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(lists, sorted);
    }

    #[test]
    fn too_large_is_rejected() {
        let g = make_named_graph("path", &[11]).unwrap();
        assert!(matches!(ForestCatalog::new(&g), Err(ForestError::TooLarge { .. })));
    }

    #[test]
    fn tree_weight_examples() {
        let p3 = make_named_graph("path", &[3]).unwrap();
        let z = [1.0, 2.0, 3.0];
        let t = &enumerate_forests(&p3, &ForestSpec::RootedTrees(0)).unwrap()[0];
        assert_eq!(forest_weight(t, &sq(), &z), 4.0);
        let p2 = make_named_graph("path", &[2]).unwrap();
        let t = &enumerate_forests(&p2, &ForestSpec::RootedTrees(1)).unwrap()[0];
        assert_eq!(forest_weight(t, &sq(), &[1.5, 3.0]), 9.0);
    }

    #[test]
    fn weight_scaling_matches_degree_excess() {
        // Scaling w by c multiplies w(T,z) by c^{1 + Σ(deg−1)} = c^{1 + 2(n−1) − n}.
        let g = random_connected_graph(6, 0.4, 5);
        let z = [1.0, 1.4, 2.2, 1.9, 2.7, 1.1];
        let w1 = ReinforcementSpec::new(1.0, 2.0, 1.0).unwrap();
        let w2 = ReinforcementSpec::new(2.0, 2.0, 1.0).unwrap();
        for t in enumerate_forests(&g, &ForestSpec::RootedTrees(2)).unwrap() {
            let ratio = forest_weight(&t, &w2, &z) / forest_weight(&t, &w1, &z);
            assert_relative_eq!(ratio, 2f64.powi(1 + 2 * 5 - 6), max_relative = 1e-12);
        }
    }

    #[test]
    fn sums_match_explicit_enumeration() {
        let g = random_connected_graph(6, 0.4, 9);
        let z = [1.0, 1.4, 2.2, 1.9, 2.7, 1.1];
        let weights: Vec<f64> = z.iter().map(|&x| sq().w(x)).collect();
        let sums = ForestCatalog::new(&g).unwrap().sums(&weights);
        for (k, h, j) in [(0, 3, 5), (2, 2, 4), (1, 5, 0)] {
            let explicit: f64 = enumerate_forests(
                &g,
                &ForestSpec::TwoComponent {
                    first: if k == h { vec![k] } else { vec![k, h] },
                    second: vec![j],
                },
            )
            .unwrap()
            .iter()
            .map(|f| forest_weight(f, &sq(), &z))
            .sum();
            assert_relative_eq!(sums.rooted_forest_weight(k, h, j), explicit, max_relative = 1e-12);
        }
    }

    #[test]
    fn partition_identity_for_two_rooted_forests() {
        let g = random_connected_graph(6, 0.5, 2);
        let (k, j) = (1, 4);
        let whole = enumerate_forests(&g, &ForestSpec::TwoComponent { first: vec![k], second: vec![j] })
            .unwrap()
            .len();
        let parts: usize = (0..6)
            .filter(|&h| h != j && h != k)
            .map(|h| {
                enumerate_forests(&g, &ForestSpec::TwoComponent { first: vec![k, h], second: vec![j] })
                    .unwrap()
                    .len()
            })
            .sum();
        // Every forest of 𝔗_{k,j} has a first component of size s, counted once per h in it.
        let weighted: usize = enumerate_forests(&g, &ForestSpec::TwoComponent { first: vec![k], second: vec![j] })
            .unwrap()
            .iter()
            .map(|f| f.components[0].members.len() - 1)
            .sum();
        assert_eq!(parts, weighted);
        assert!(whole > 0);
    }

    #[test]
    fn p3_matrix_tree_example() {
        let p3 = make_named_graph("path", &[3]).unwrap();
        let b = build_generator(&p3, &sq(), &[1.0, 2.0, 3.0]).unwrap();
        let m = minor(&b.h, 0);
        assert_eq!(m, DMatrix::from_row_slice(2, 2, &[-10.0, 9.0, 4.0, -4.0]));
        let r = verify_matrix_tree_vrjp(&p3, &sq(), &[1.0, 2.0, 3.0], 0, "P3").unwrap();
        assert!(r.pass, "{r:?}");
        assert_relative_eq!(r.checks[0].lhs, 4.0, max_relative = 1e-12);
        assert_relative_eq!(r.checks[0].rhs, 4.0);
    }

    #[test]
    fn directed_examples() {
        let dg = WeightedDigraph::new(2, &[(0, 1, 3.0), (1, 0, 5.0)]);
        let r = verify_matrix_tree_directed(&dg, 0, 0, "two-node").unwrap();
        assert!(r.pass);
        assert_relative_eq!(r.checks[0].lhs, 5.0);
        let r = verify_matrix_tree_directed(&dg, 0, 1, "two-node").unwrap();
        assert_relative_eq!(r.checks[0].lhs, -5.0);
        assert!(r.pass);
        let k3 = make_named_graph("complete", &[3]).unwrap();
        let unit = WeightedDigraph::from_vrjp(&k3, &[1.0; 3]);
        let s = enumerate_in_forests(&unit).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let r = verify_matrix_tree_directed(&unit, i, j, "K3").unwrap();
                assert!(r.pass);
                assert_relative_eq!(r.checks[0].lhs.abs(), 3.0, max_relative = 1e-12);
            }
            assert_eq!(s.tree(i), 3.0);
        }
    }

    #[test]
    fn matrix_tree_on_random_instances() {
        for seed in 0..10 {
            let g = random_connected_graph(5 + (seed as usize % 2), 0.4, seed);
            let z: Vec<f64> = (0..g.vertex_count()).map(|v| 1.0 + 0.3 * v as f64).collect();
            let dg = WeightedDigraph::random_on(&g, 0.5, 2.0, seed);
            let r = verify_matrix_tree_all(&g, &ReinforcementSpec::power(1.5), &z, &dg, "random").unwrap();
            let worst = r.checks.iter().max_by(|a, b| a.delta.total_cmp(&b.delta)).unwrap();
            assert!(r.pass, "{worst:?}");
        }
    }

    #[test]
    fn two_vertex_kappa_and_derivative() {
        let g = make_named_graph("path", &[2]).unwrap();
        let z = [1.0, 2.0];
        for route in [KappaRoute::Matrix, KappaRoute::Combinatorial] {
            let k = kappa_functional(&g, &sq(), &z, 0, 1, 1, 0, route).unwrap();
            assert_relative_eq!(k.value, 1.25, max_relative = 1e-14);
        }
        let d = kappa_derivative(&g, &sq(), &z, 0, 1, 1, 0).unwrap();
        assert_relative_eq!(d, -2.0, max_relative = 1e-12);
        let b = build_generator(&g, &sq(), &z).unwrap();
        let km = KappaMatrix::new(&b.h, 0, 1).unwrap();
        assert_relative_eq!(km.kappa_derivatives(&g, 0, 2.0)[1], -2.0, max_relative = 1e-12);
        // The degree-restricted reading of κ̃ gives a different value here.
        let sums = ForestCatalog::new(&g).unwrap().sums(&[1.0, 4.0]);
        assert_relative_eq!(sums.kappa_derivative_restricted(2.0, 0, 1, 1, 0), 0.5, max_relative = 1e-12);
    }

    #[test]
    fn kappa_routes_agree_and_antisymmetry() {
        let g = random_connected_graph(6, 0.5, 4);
        let z = [1.2, 2.9, 1.7, 2.2, 1.0, 2.5];
        let w = ReinforcementSpec::power(3.0);
        let weights: Vec<f64> = z.iter().map(|&x| w.w(x)).collect();
        let sums = ForestCatalog::new(&g).unwrap().sums(&weights);
        let b = build_generator(&g, &w, &z).unwrap();
        for i in 0..6 {
            for j in 0..6 {
                if i == j {
                    continue;
                }
                let km = KappaMatrix::new(&b.h, i, j).unwrap();
                for h in 0..6 {
                    for k in 0..6 {
                        let m = km.kappa(h, k);
                        let c = sums.kappa(i, j, h, k);
                        assert!((m - c).abs() <= 1e-8 * m.abs().max(c.abs()).max(1e-4), "{i}{j}{h}{k}: {m} vs {c}");
                        if h == k {
                            assert!(m.abs() < 1e-12 && c == 0.0);
                        }
                        assert_relative_eq!(c, -sums.kappa(j, i, h, k), max_relative = 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn derivative_identity_matches_finite_differences_on_k4() {
        let g = make_named_graph("complete", &[4]).unwrap();
        let w = ReinforcementSpec::power(2.0);
        let z = vec![1.3, 2.1, 1.7, 2.6];
        for (i, j, h, k) in [(0, 1, 2, 3), (0, 1, 1, 0), (2, 3, 0, 2), (1, 3, 0, 2), (0, 2, 3, 1)] {
            let id = kappa_derivative(&g, &w, &z, i, j, h, k).unwrap();
            let step = 1e-6 * z[k];
            let mut zp = z.clone();
            zp[k] += step;
            let mut zm = z.clone();
            zm[k] -= step;
            let kp = kappa_functional(&g, &w, &zp, i, j, h, k, KappaRoute::Matrix).unwrap().value;
            let km = kappa_functional(&g, &w, &zm, i, j, h, k, KappaRoute::Matrix).unwrap().value;
            let fd = (kp - km) / (2.0 * step);
            assert!((id - fd).abs() <= 1e-4 * fd.abs().max(1e-3), "{id} vs {fd}");
            let b = build_generator(&g, &w, &z).unwrap();
            let an = KappaMatrix::new(&b.h, i, j).unwrap().kappa_derivatives(&g, k, w.dw(z[k]))[h];
            assert_relative_eq!(an, id, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    #[test]
    fn two_vertex_bounds() {
        let g = make_named_graph("path", &[2]).unwrap();
        let r = verify_kappa_bounds(&g, &sq(), &[1.0, 2.0], BoundLemma::Adjacent, Some(&[(0, 1)])).unwrap();
        assert!(r.pass);
        // Lower bound holds with equality on the two-vertex graph.
        assert!(r.worst_slack.abs() < 1e-12);
    }

    #[test]
    fn distance_two_bound_and_hypothesis_errors() {
        let g = make_named_graph("path", &[5]).unwrap();
        let z = [2.0, 1.0, 2.5, 1.0, 1.5];
        let r = verify_kappa_bounds(
            &g,
            &sq(),
            &z,
            BoundLemma::DistanceTwo { gamma: 20.0 },
            Some(&[(0, 2), (1, 3), (2, 4)]),
        )
        .unwrap();
        assert!(r.pass && r.checked == 3);
        assert!(matches!(
            verify_kappa_bounds(&g, &sq(), &z, BoundLemma::DistanceTwo { gamma: 10.0 }, Some(&[(0, 1)])),
            Err(ForestError::HypothesisViolated(_))
        ));
        assert!(matches!(
            verify_kappa_bounds(&g, &sq(), &z, BoundLemma::DistanceTwo { gamma: 1.0 }, Some(&[(0, 2)])),
            Err(ForestError::HypothesisViolated(_))
        ));
    }
}
