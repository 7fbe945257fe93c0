//! Frozen-weight Markov machinery: the generator `H(z)`, its stationary law,
//! the Poisson solution `Q(z)` by three independent routes, and the matrix
//! lemmas used by the incremental fast path.
//!
//! For a weight vector `z` write `w_v = w(z_v)` and `W = Σ_v w_v`. Then
//! `H_ij = w_j [j~i]`, `H_ii = -Σ_{k~i} w_k`, `π_j = w_j / W` and `Π = 1ᵀπ`.
//! `H` is reversible with respect to `π`, so `S = D^{1/2} H D^{-1/2}` with
//! `D = diag(w)` is symmetric; its second eigenvalue gives the spectral gap.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{Graph, VertexId};
use crate::quadrature::{gauss_kronrod_vec, QuadratureError};
use crate::reinforcement::{ReinforcementError, ReinforcementSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error(transparent)]
    Domain(#[from] ReinforcementError),
    #[error("weight vector has {got} entries for {expected} vertices")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("minor H^({0}) is numerically singular")]
    SingularMinor(VertexId),
    #[error("A22 is singular")]
    SingularA22,
    #[error("degenerate rank-one update: 1 + vᵀA⁻¹u = {0}")]
    DegenerateUpdate(f64),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
}

/// `H(z)`, `π(z)`, `Π(z)` and `W` for one weight vector.
#[derive(Debug, Clone)]
pub struct GeneratorBundle {
    pub h: DMatrix<f64>,
    pub pi: DVector<f64>,
    pub big_pi: DMatrix<f64>,
    pub total_weight: f64,
    /// `w(z_v)` per vertex.
    pub weights: Vec<f64>,
}

pub fn generator_from_weights(g: &Graph, weights: &[f64]) -> GeneratorBundle {
    let n = g.vertex_count();
    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        let mut out = 0.0;
        for &j in g.neighbors(i) {
            h[(i, j)] = weights[j];
            out += weights[j];
        }
        h[(i, i)] = -out;
    }
    let total_weight: f64 = weights.iter().sum();
    let pi = DVector::from_iterator(n, weights.iter().map(|w| w / total_weight));
    let big_pi = DMatrix::from_fn(n, n, |_, c| pi[c]);
    GeneratorBundle {
        h,
        pi,
        big_pi,
        total_weight,
        weights: weights.to_vec(),
    }
}

pub fn build_generator(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
) -> Result<GeneratorBundle, LinalgError> {
    let weights = eval_weights(g, w, z)?;
    Ok(generator_from_weights(g, &weights))
}

pub(crate) fn eval_weights(
    g: &Graph,
    w: &ReinforcementSpec,
    z: &[f64],
) -> Result<Vec<f64>, LinalgError> {
    if z.len() != g.vertex_count() {
        return Err(LinalgError::DimensionMismatch {
            expected: g.vertex_count(),
            got: z.len(),
        });
    }
    z.iter()
        .map(|&x| Ok(w.eval_w_and_derivative(x)?.0))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PoissonRoute {
    ClosedForm,
    LinearSolve,
    Integral,
}

#[derive(Debug, Clone)]
pub struct PoissonSolution {
    pub q: DMatrix<f64>,
    pub route: PoissonRoute,
    /// `max(‖QH − (I−Π)‖_max, ‖HQ − (I−Π)‖_max)`.
    pub residual: f64,
}

/// Absolute tolerance of the integral route's quadrature.
pub const INTEGRAL_TOLERANCE: f64 = 1e-11;
/// Bound on the neglected tail `∫_{T*}^∞`; the tail costs only `log` range.
pub const INTEGRAL_TAIL: f64 = 1e-14;

pub fn poisson_solution(
    bundle: &GeneratorBundle,
    route: PoissonRoute,
) -> Result<PoissonSolution, LinalgError> {
    let q = match route {
        PoissonRoute::ClosedForm => poisson_closed_form(bundle)?,
        PoissonRoute::LinearSolve => poisson_linear_solve(bundle)?,
        PoissonRoute::Integral => poisson_integral(bundle)?,
    };
    let residual = poisson_residual(bundle, &q);
    Ok(PoissonSolution { q, route, residual })
}

pub fn poisson_residual(bundle: &GeneratorBundle, q: &DMatrix<f64>) -> f64 {
    let n = bundle.h.nrows();
    let target = DMatrix::identity(n, n) - &bundle.big_pi;
    let left = (q * &bundle.h - &target).amax();
    let right = (&bundle.h * q - &target).amax();
    left.max(right)
}

/// `H^{(j)}`: `H` with row and column `j` deleted.
pub fn minor(h: &DMatrix<f64>, j: VertexId) -> DMatrix<f64> {
    h.clone().remove_row(j).remove_column(j)
}

/// Inverse of a minor `H^{(anchor)}` with helpers that work in full vertex
/// coordinates (the anchor coordinate is pinned to zero).
#[derive(Debug, Clone)]
pub struct MinorInverse {
    pub anchor: VertexId,
    pub inv: DMatrix<f64>,
    /// May be infinite for large minors.
    pub det: f64,
}

impl MinorInverse {
    pub fn new(h: &DMatrix<f64>, anchor: VertexId) -> Result<Self, LinalgError> {
        let m = minor(h, anchor);
        let scale = m.amax().max(f64::MIN_POSITIVE);
        let lu = m.lu();
        // Relative pivot check; the determinant itself overflows on large minors.
        let n = h.nrows() - 1;
        let pivot = lu.u().diagonal().amin();
        if !(pivot > n as f64 * f64::EPSILON * scale) {
            return Err(LinalgError::SingularMinor(anchor));
        }
        let det = lu.determinant();
        let inv = lu.try_inverse().ok_or(LinalgError::SingularMinor(anchor))?;
        Ok(MinorInverse { anchor, inv, det })
    }

    #[inline]
    fn pos(&self, v: VertexId) -> Option<usize> {
        match v.cmp(&self.anchor) {
            std::cmp::Ordering::Less => Some(v),
            std::cmp::Ordering::Equal => None,
            std::cmp::Ordering::Greater => Some(v - 1),
        }
    }

    /// `x = (H^{(a)})^{-1} b` on `V∖{a}`, returned in full coordinates with `x_a = 0`.
    pub fn solve_full(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut out = vec![0.0; n];
        for v in 0..n {
            let Some(r) = self.pos(v) else { continue };
            let mut s = 0.0;
            for u in 0..n {
                if let Some(c) = self.pos(u) {
                    s += self.inv[(r, c)] * rhs[u];
                }
            }
            out[v] = s;
        }
        out
    }

    /// `r = (H^{(a)})^{-1} 1ᵀ`, in full coordinates with `r_a = 0`.
    pub fn row_sums(&self) -> Vec<f64> {
        let n = self.inv.nrows() + 1;
        (0..n)
            .map(|v| match self.pos(v) {
                Some(r) => self.inv.row(r).sum(),
                None => 0.0,
            })
            .collect()
    }

    /// Applies the change `w_k -> w_k + delta` to the underlying minor.
    ///
    /// `H` changes by `delta Σ_{m~k} e_m (e_k − e_m)ᵀ`, so the minor takes
    /// one Sherman–Morrison step per neighbor `m ≠ anchor` of `k`.
    pub fn update_weight(&mut self, g: &Graph, k: VertexId, delta: f64) -> Result<(), LinalgError> {
        let n = self.inv.nrows();
        for &m in g.neighbors(k) {
            let Some(pm) = self.pos(m) else { continue };
            let mut u = DVector::zeros(n);
            u[pm] = delta;
            let mut v = DVector::zeros(n);
            if let Some(pk) = self.pos(k) {
                v[pk] += 1.0;
            }
            v[pm] -= 1.0;
            let (inv, det) = sherman_morrison(&self.inv, self.det, &u, &v)?;
            self.inv = inv;
            self.det = det;
        }
        Ok(())
    }
}

/// `Q_ij = π_j (π^{(j)} − e_i^{(j)}) (H^{(j)})^{-1} 1ᵀ`, assembled column by column.
pub fn poisson_closed_form(bundle: &GeneratorBundle) -> Result<DMatrix<f64>, LinalgError> {
    let n = bundle.h.nrows();
    let mut q = DMatrix::zeros(n, n);
    for j in 0..n {
        let col = poisson_column(bundle, &MinorInverse::new(&bundle.h, j)?);
        q.set_column(j, &DVector::from_vec(col));
    }
    Ok(q)
}

/// Column `j` of `Q` from the minor inverse anchored at `j`.
pub fn poisson_column(bundle: &GeneratorBundle, m: &MinorInverse) -> Vec<f64> {
    let j = m.anchor;
    let r = m.row_sums();
    let pi_r: f64 = r.iter().zip(bundle.pi.iter()).map(|(a, b)| a * b).sum();
    r.iter().map(|ri| bundle.pi[j] * (pi_r - ri)).collect()
}

/// Solves `QH = I − Π` with `Q1ᵀ = 0` through the bordered system
/// `[[Hᵀ, 1],[1ᵀ, 0]] [qᵀ; μ] = [(e_i − π)ᵀ; 0]` for every row `i`.
pub fn poisson_linear_solve(bundle: &GeneratorBundle) -> Result<DMatrix<f64>, LinalgError> {
    let n = bundle.h.nrows();
    let mut a = DMatrix::zeros(n + 1, n + 1);
    a.view_mut((0, 0), (n, n)).copy_from(&bundle.h.transpose());
    for k in 0..n {
        a[(k, n)] = 1.0;
        a[(n, k)] = 1.0;
    }
    let mut rhs = DMatrix::zeros(n + 1, n);
    for i in 0..n {
        for k in 0..n {
            rhs[(k, i)] = if k == i { 1.0 } else { 0.0 } - bundle.pi[k];
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or(LinalgError::SingularMinor(n))?;
    Ok(sol.view((0, 0), (n, n)).transpose())
}

/// `S = D^{1/2} H D^{-1/2}` with `D = diag(w)`; symmetric because the chain
/// is reversible with respect to `π ∝ w`.
fn symmetrized(bundle: &GeneratorBundle) -> DMatrix<f64> {
    let n = bundle.h.nrows();
    let s = DMatrix::from_fn(n, n, |i, j| {
        bundle.h[(i, j)] * (bundle.weights[i] / bundle.weights[j]).sqrt()
    });
    0.5 * (&s + s.transpose())
}

/// Spectral gap of `H`: minus the second-largest eigenvalue of the
/// symmetrized generator.
pub fn spectral_gap(bundle: &GeneratorBundle) -> f64 {
    let mut ev: Vec<f64> = SymmetricEigen::new(symmetrized(bundle))
        .eigenvalues
        .iter()
        .copied()
        .collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    -ev[1]
}

/// `∫_0^{T*} (Π − e^{sH}) ds`, with `T*` large enough that the neglected
/// tail is below [`INTEGRAL_TAIL`].
///
/// `‖e^{sH} − Π‖ ≤ C e^{−gap·s}` with `C = n sqrt(max w / min w)` bounds
/// every entry, so the tail is at most `C e^{−gap·T*} / gap`. The integrand
/// is evaluated as `D^{-1/2} U e^{sΛ} Uᵀ D^{1/2}` from one eigendecomposition
/// of the symmetrized generator, with the top eigenvalue set to its exact
/// value 0; this stays accurate for stiff `sH` where scaling and squaring
/// does not.
pub fn poisson_integral(bundle: &GeneratorBundle) -> Result<DMatrix<f64>, LinalgError> {
    let n = bundle.h.nrows();
    let eig = SymmetricEigen::new(symmetrized(bundle));
    let mut lambda: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let top = (0..n).max_by(|&a, &b| lambda[a].total_cmp(&lambda[b])).unwrap_or(0);
    lambda[top] = 0.0;
    let gap = -lambda
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != top)
        .map(|(_, &l)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    let wmax = bundle.weights.iter().copied().fold(0.0, f64::max);
    let wmin = bundle.weights.iter().copied().fold(f64::INFINITY, f64::min);
    let c = n as f64 * (wmax / wmin).sqrt();
    let t_star = (c / (gap * INTEGRAL_TAIL)).ln().max(1.0) / gap;
    let root: Vec<f64> = bundle.weights.iter().map(|w| w.sqrt()).collect();
    // e^{sH}_{ij} = Σ_m L_{im} R_{jm} e^{s λ_m}
    let left = DMatrix::from_fn(n, n, |i, m| eig.eigenvectors[(i, m)] / root[i]);
    let right = DMatrix::from_fn(n, n, |j, m| eig.eigenvectors[(j, m)] * root[j]);
    let big_pi = &bundle.big_pi;
    // Geometric initial panels follow the exponential decay of the integrand.
    let decades = 8usize;
    let mut edges = vec![0.0];
    for p in 0..decades {
        edges.push(t_star * 2f64.powi(p as i32 - decades as i32 + 1));
    }
    let mut q = DMatrix::zeros(n, n);
    for win in edges.windows(2) {
        let part = gauss_kronrod_vec(
            |s| {
                let mut scaled = left.clone();
                for (m, l) in lambda.iter().enumerate() {
                    let e = (s * l).exp();
                    scaled.column_mut(m).scale_mut(e);
                }
                let e = scaled * right.transpose();
                (big_pi - e).as_slice().to_vec()
            },
            win[0],
            win[1],
            INTEGRAL_TOLERANCE / decades as f64,
            2,
            4096,
        )?;
        q += DMatrix::from_column_slice(n, n, &part);
    }
    Ok(q)
}

/// Upper-right block of `exp(t [[0, A12], [0, A22]])`, i.e.
/// `A12 (e^{t A22} − I) A22^{-1}`.
pub fn block_matrix_exponential(
    a12: &DMatrix<f64>,
    a22: &DMatrix<f64>,
    t: f64,
) -> Result<DMatrix<f64>, LinalgError> {
    let n = a22.nrows();
    let inv = a22.clone().try_inverse().ok_or(LinalgError::SingularA22)?;
    let e = (a22 * t).exp() - DMatrix::identity(n, n);
    Ok(a12 * e * inv)
}

/// `((A + u vᵀ)^{-1}, det(A + u vᵀ))` from `A^{-1}` and `det A`.
pub fn sherman_morrison(
    a_inv: &DMatrix<f64>,
    det_a: f64,
    u: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DMatrix<f64>, f64), LinalgError> {
    let au = a_inv * u;
    let va = v.transpose() * a_inv;
    let denom = 1.0 + (v.transpose() * &au)[(0, 0)];
    if denom.abs() < 1e-12 {
        return Err(LinalgError::DegenerateUpdate(denom));
    }
    let inv = a_inv - (&au * &va) / denom;
    Ok((inv, det_a * denom))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{make_named_graph, random_connected_graph};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_vertex() -> GeneratorBundle {
        let g = make_named_graph("path", &[2]).unwrap();
        build_generator(&g, &ReinforcementSpec::power(2.0), &[1.0, 2.0]).unwrap()
    }

    #[test]
    fn two_vertex_generator() {
        let b = two_vertex();
        assert_eq!(b.h, DMatrix::from_row_slice(2, 2, &[-4.0, 4.0, 1.0, -1.0]));
        assert_relative_eq!(b.pi[0], 0.2);
        assert_relative_eq!(b.pi[1], 0.8);
        assert_eq!(b.total_weight, 5.0);
    }

    #[test]
    fn two_vertex_poisson_all_routes() {
        let b = two_vertex();
        let expect = DMatrix::from_row_slice(2, 2, &[-0.16, 0.16, 0.04, -0.04]);
        for route in [PoissonRoute::ClosedForm, PoissonRoute::LinearSolve, PoissonRoute::Integral] {
            let s = poisson_solution(&b, route).unwrap();
            assert!((&s.q - &expect).amax() < 1e-12, "{route:?}: {}", s.q);
            assert!(s.residual <= 1e-10);
        }
    }

    #[test]
    fn uniform_on_vertex_transitive() {
        let g = make_named_graph("cycle", &[5]).unwrap();
        let b = build_generator(&g, &ReinforcementSpec::power(2.0), &[1.7; 5]).unwrap();
        for p in b.pi.iter() {
            assert_relative_eq!(*p, 0.2, max_relative = 1e-15);
        }
        for i in 0..5 {
            assert_eq!(b.h.row(i).sum(), 0.0);
        }
    }

    #[test]
    fn routes_agree_on_random_graphs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for t in 0..20 {
            let n = rng.random_range(3..=8);
            let g = random_connected_graph(n, 0.4, t);
            let alpha = [1.5, 2.0, 3.0][t as usize % 3];
            let z: Vec<f64> = (0..n).map(|_| rng.random_range(1.0..3.0)).collect();
            let b = build_generator(&g, &ReinforcementSpec::power(alpha), &z).unwrap();
            let cf = poisson_solution(&b, PoissonRoute::ClosedForm).unwrap();
            let ls = poisson_solution(&b, PoissonRoute::LinearSolve).unwrap();
            let it = poisson_solution(&b, PoissonRoute::Integral).unwrap();
            assert!((&cf.q - &ls.q).amax() <= 1e-8);
            assert!((&cf.q - &it.q).amax() <= 1e-8, "{}", (&cf.q - &it.q).amax());
            assert!(cf.residual <= 1e-10 && ls.residual <= 1e-10 && it.residual <= 1e-10);
            for i in 0..n {
                assert!(cf.q.row(i).sum().abs() < 1e-12);
            }
        }
    }

    #[test]
    fn pi_is_stationary_and_projection_idempotent() {
        let g = random_connected_graph(6, 0.5, 3);
        let b = build_generator(&g, &ReinforcementSpec::power(2.0), &[1.0, 1.5, 2.0, 2.5, 3.0, 1.2]).unwrap();
        assert!((b.pi.transpose() * &b.h).amax() < 1e-12);
        assert!((&b.big_pi * &b.big_pi - &b.big_pi).amax() < 1e-12);
    }

    #[test]
    fn block_exponential_scalar_and_dense() {
        let a12 = DMatrix::from_element(1, 1, 1.0);
        let a22 = DMatrix::from_element(1, 1, -1.0);
        let v = block_matrix_exponential(&a12, &a22, 1.0).unwrap();
        assert!((v[(0, 0)] - (1.0 - (-1f64).exp())).abs() < 1e-14);
        assert_eq!(block_matrix_exponential(&a12, &a22, 0.0).unwrap()[(0, 0)], 0.0);

        let a12 = DMatrix::from_row_slice(2, 3, &[1.0, 0.5, -0.2, 0.3, 0.0, 2.0]);
        let a22 = DMatrix::from_row_slice(3, 3, &[-2.0, 1.0, 0.0, 0.5, -1.5, 0.3, 0.0, 0.4, -1.0]);
        let mut full = DMatrix::zeros(5, 5);
        full.view_mut((0, 2), (2, 3)).copy_from(&a12);
        full.view_mut((2, 2), (3, 3)).copy_from(&a22);
        let e = (full * 0.7).exp();
        let b = block_matrix_exponential(&a12, &a22, 0.7).unwrap();
        assert!((e.view((0, 2), (2, 3)) - b).amax() < 1e-12);
        assert!(block_matrix_exponential(&a12, &DMatrix::zeros(3, 3), 1.0).is_err());
    }

    #[test]
    fn sherman_morrison_cases() {
        let id = DMatrix::<f64>::identity(2, 2);
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let (inv, det) = sherman_morrison(&id, 1.0, &e1, &e1).unwrap();
        assert_eq!(det, 2.0);
        assert_eq!(inv, DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])));
        let (inv, det) = sherman_morrison(&id, 1.0, &DVector::zeros(2), &e1).unwrap();
        assert_eq!((inv, det), (id.clone(), 1.0));
        let m = -e1.clone();
        assert!(matches!(
            sherman_morrison(&id, 1.0, &m, &e1),
            Err(LinalgError::DegenerateUpdate(_))
        ));

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let a = DMatrix::from_fn(3, 3, |i, j| rng.random_range(-1.0..1.0) + if i == j { 3.0 } else { 0.0 });
            let u = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let v = DVector::from_fn(3, |_, _| rng.random_range(-1.0..1.0));
            let (inv, det) = sherman_morrison(&a.clone().try_inverse().unwrap(), a.determinant(), &u, &v).unwrap();
            let direct = &a + &u * v.transpose();
            assert!((inv - direct.clone().try_inverse().unwrap()).amax() < 1e-10);
            assert_relative_eq!(det, direct.determinant(), max_relative = 1e-10);
        }
    }

    #[test]
    fn incremental_minor_matches_refactorization() {
        let g = random_connected_graph(7, 0.4, 8);
        let w = ReinforcementSpec::power(2.0);
        let mut z = vec![1.0, 1.3, 2.0, 1.1, 2.5, 1.7, 1.2];
        let b = build_generator(&g, &w, &z).unwrap();
        for anchor in [0, 3] {
            for k in [anchor, 5] {
                let mut m = MinorInverse::new(&b.h, anchor).unwrap();
                let old = w.w(z[k]);
                z[k] += 0.8;
                m.update_weight(&g, k, w.w(z[k]) - old).unwrap();
                let fresh = MinorInverse::new(&build_generator(&g, &w, &z).unwrap().h, anchor).unwrap();
                assert!((&m.inv - &fresh.inv).amax() < 1e-9);
                assert_relative_eq!(m.det, fresh.det, max_relative = 1e-9);
                z[k] -= 0.8;
            }
        }
    }

    #[test]
    fn closed_form_diagonal_formula() {
        let g = random_connected_graph(5, 0.5, 2);
        let b = build_generator(&g, &ReinforcementSpec::power(3.0), &[1.0, 2.0, 1.5, 1.2, 2.7]).unwrap();
        let q = poisson_closed_form(&b).unwrap();
        for j in 0..5 {
            let r = MinorInverse::new(&b.h, j).unwrap().row_sums();
            let pi_r: f64 = r.iter().zip(b.pi.iter()).map(|(x, p)| x * p).sum();
            assert_relative_eq!(q[(j, j)], b.pi[j] * pi_r, max_relative = 1e-12);
        }
    }

    #[test]
    fn large_minor_with_overflowing_determinant_is_accepted() {
        let n = 96;
        let g = make_named_graph("cycle", &[n]).unwrap();
        let z: Vec<f64> = (0..n).map(|v| 1.0 + 0.25 * v as f64).collect();
        let b = build_generator(&g, &ReinforcementSpec::power(2.0), &z).unwrap();
        let m = MinorInverse::new(&b.h, 0).unwrap();
        let r = m.solve_full(&vec![1.0; n]);
        assert!(r.iter().all(|x| x.is_finite()));

        let pair = make_named_graph("path", &[2]).unwrap();
        let h = generator_from_weights(&pair, &[1.0, 0.0]).h;
        assert!(matches!(MinorInverse::new(&h, 1), Err(LinalgError::SingularMinor(1))));
    }
}
