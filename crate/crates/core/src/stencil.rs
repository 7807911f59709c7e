//! Meshfree derivatives from neighborhood statistics.
//!
//! For node `p` with neighbors `i ∈ B(p)` the first-derivative estimate is
//!
//! ```text
//! ∇u(p) ≈ [ (1/N_b) Σᵢ (u(xᵢ) − u(p)) (xᵢ − p)ᵀ ] · M(p)⁻¹,
//! M(p)  = (1/N_b) Σᵢ (xᵢ − p)(xᵢ − p)ᵀ.
//! ```
//!
//! The estimate is linear in the field, so each partial derivative is stored
//! as a sparse `N × N` matrix. Second derivatives compose those matrices and
//! symmetrize.

use std::sync::Arc;

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{PointCloud, SpatialGraph};
use crate::sparse::CsrMatrix;

/// Relative condition threshold below which the moment matrix is regularized.
const ILL_CONDITIONED: f64 = 1e-10;

/// Relative distance tolerance for treating neighbors as one distance shell.
const SHELL_TOL: f64 = 1e-9;

/// Stencil construction knobs. Unset fields fall back to the defaults:
/// radius `2.5 ×` median nearest-neighbor distance, 16 neighbors in 2-D and
/// 4 in 1-D, regularization `1e-8 · tr(M)/d`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StencilParams {
    pub radius: Option<f64>,
    pub radius_factor: f64,
    pub max_neighbors: Option<usize>,
    pub eps_rel: f64,
}

impl Default for StencilParams {
    fn default() -> Self {
        Self {
            radius: None,
            radius_factor: 2.5,
            max_neighbors: None,
            eps_rel: 1e-8,
        }
    }
}

impl StencilParams {
    pub fn resolve(&self, cloud: &PointCloud) -> (f64, usize) {
        let radius = self
            .radius
            .unwrap_or_else(|| self.radius_factor * median_nn_distance(cloud));
        let nb = self.max_neighbors.unwrap_or(if cloud.dim() == 1 { 4 } else { 16 });
        (radius, nb)
    }
}

/// Per-node neighborhoods and the derivative operators built from them.
#[derive(Clone, Debug)]
pub struct StencilSet {
    pub radius: f64,
    pub max_neighbors: usize,
    pub neighbor_idx: Vec<Vec<usize>>,
    /// `N × d²`, row-major inverse moment matrix per node.
    pub moment_inverse: Array2<f64>,
    /// Regularization actually added per node (zero when well conditioned).
    pub regularization_eps: Vec<f64>,
    dim: usize,
    grad_ops: Vec<Arc<CsrMatrix>>,
    hess_ops: Vec<Arc<CsrMatrix>>,
}

/// Median distance from each node to its closest other node.
pub fn median_nn_distance(cloud: &PointCloud) -> f64 {
    let n = cloud.len();
    let mut d: Vec<f64> = (0..n)
        .map(|u| {
            (0..n)
                .filter(|&v| v != u)
                .map(|v| cloud.distance(u, v))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    d.sort_by(f64::total_cmp);
    if d.is_empty() {
        0.0
    } else {
        d[n / 2]
    }
}

/// Keep the `max_neighbors` nearest candidates (sorted by distance, then
/// index). A group of equidistant points straddling the cutoff is dropped
/// as a whole so lattice stencils stay symmetric, unless that would leave
/// fewer than `min_keep` points.
fn truncate_at_shell(cand: &mut Vec<(f64, usize)>, max_neighbors: usize, min_keep: usize) {
    if cand.len() <= max_neighbors {
        return;
    }
    let cut = cand[max_neighbors].0;
    let tol = SHELL_TOL * cut.max(f64::MIN_POSITIVE);
    let mut keep = max_neighbors;
    while keep > 0 && (cut - cand[keep - 1].0).abs() <= tol {
        keep -= 1;
    }
    cand.truncate(if keep >= min_keep { keep } else { max_neighbors });
}

/// Stencils on the point cloud underlying `graph`.
pub fn build_stencils(graph: &SpatialGraph, radius: f64, max_neighbors: usize, eps_rel: f64) -> Result<StencilSet> {
    StencilSet::build(&graph.cloud, radius, max_neighbors, eps_rel)
}

impl StencilSet {
    pub fn with_params(cloud: &PointCloud, params: &StencilParams) -> Result<Self> {
        let (radius, nb) = params.resolve(cloud);
        Self::build(cloud, radius, nb, params.eps_rel)
    }

    /// Up to `max_neighbors` nearest points within `radius` per node, ties
    /// broken by lower index. Equidistant points at the cutoff are kept or
    /// dropped together.
    pub fn build(cloud: &PointCloud, radius: f64, max_neighbors: usize, eps_rel: f64) -> Result<Self> {
        if !(radius > 0.0) || max_neighbors == 0 {
            return Err(Error::DegenerateInput(format!(
                "stencil radius {radius} and max_neighbors {max_neighbors} must be positive"
            )));
        }
        let n = cloud.len();
        let d = cloud.dim();
        let mut neighbor_idx = Vec::with_capacity(n);
        let mut short = Vec::new();
        let mut cand: Vec<(f64, usize)> = Vec::new();
        for p in 0..n {
            cand.clear();
            for i in 0..n {
                if i == p {
                    continue;
                }
                let r = cloud.distance(p, i);
                if r <= radius {
                    cand.push((r, i));
                }
            }
            cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            truncate_at_shell(&mut cand, max_neighbors, d);
            if cand.len() < d {
                short.push((p, cand.len()));
            }
            neighbor_idx.push(cand.iter().map(|c| c.1).collect::<Vec<_>>());
        }
        if !short.is_empty() {
            return Err(Error::InsufficientNeighbors {
                nodes: short,
                required: d,
            });
        }
        Self::from_neighbors(cloud, radius, max_neighbors, neighbor_idx, eps_rel)
    }

    /// Assemble from explicit neighborhoods (used when loading from cache).
    pub fn from_neighbors(
        cloud: &PointCloud,
        radius: f64,
        max_neighbors: usize,
        neighbor_idx: Vec<Vec<usize>>,
        eps_rel: f64,
    ) -> Result<Self> {
        let n = cloud.len();
        let d = cloud.dim();
        if neighbor_idx.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} neighborhoods for {n} nodes",
                neighbor_idx.len()
            )));
        }
        let mut moment_inverse = Array2::zeros((n, d * d));
        let mut regularization_eps = vec![0.0; n];
        let mut grad_rows: Vec<Vec<Vec<(usize, f64)>>> = vec![Vec::with_capacity(n); d];
        for (p, nbrs) in neighbor_idx.iter().enumerate() {
            let nb = nbrs.len() as f64;
            let disp: Vec<Vec<f64>> = nbrs.iter().map(|&i| cloud.displacement(p, i)).collect();
            let mut m = DMatrix::<f64>::zeros(d, d);
            for dx in &disp {
                for a in 0..d {
                    for b in 0..d {
                        m[(a, b)] += dx[a] * dx[b] / nb;
                    }
                }
            }
            let eig = m.clone().symmetric_eigenvalues();
            let (lo, hi) = eig
                .iter()
                .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            if !(hi > 0.0) {
                return Err(Error::InsufficientNeighbors {
                    nodes: vec![(p, nbrs.len())],
                    required: d,
                });
            }
            if lo < ILL_CONDITIONED * hi {
                let eps = eps_rel * m.trace() / d as f64;
                regularization_eps[p] = eps;
                for a in 0..d {
                    m[(a, a)] += eps;
                }
            }
            let minv = m.try_inverse().ok_or_else(|| Error::InsufficientNeighbors {
                nodes: vec![(p, nbrs.len())],
                required: d,
            })?;
            for a in 0..d {
                for b in 0..d {
                    moment_inverse[[p, a * d + b]] = minv[(a, b)];
                }
            }
            for (j, rows) in grad_rows.iter_mut().enumerate() {
                let mut row = Vec::with_capacity(nbrs.len() + 1);
                let mut diag = 0.0;
                for (k, &i) in nbrs.iter().enumerate() {
                    let w: f64 = (0..d).map(|a| disp[k][a] * minv[(a, j)]).sum::<f64>() / nb;
                    row.push((i, w));
                    diag -= w;
                }
                row.push((p, diag));
                rows.push(row);
            }
        }
        let grad_ops: Vec<Arc<CsrMatrix>> = grad_rows
            .into_iter()
            .map(|rows| Arc::new(CsrMatrix::from_rows(n, rows)))
            .collect();
        let mut hess_ops: Vec<Arc<CsrMatrix>> = Vec::with_capacity(d * d);
        for j in 0..d {
            for k in 0..d {
                if k < j {
                    let sym = hess_ops[k * d + j].clone();
                    hess_ops.push(sym);
                } else if k == j {
                    hess_ops.push(Arc::new(grad_ops[j].compose(&grad_ops[j])));
                } else {
                    let jk = grad_ops[k].compose(&grad_ops[j]);
                    let kj = grad_ops[j].compose(&grad_ops[k]);
                    hess_ops.push(Arc::new(jk.linear_combination(0.5, &kj, 0.5)));
                }
            }
        }
        Ok(Self {
            radius,
            max_neighbors,
            neighbor_idx,
            moment_inverse,
            regularization_eps,
            dim: d,
            grad_ops,
            hess_ops,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.neighbor_idx.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbor_idx.is_empty()
    }

    /// Sparse operator for `∂/∂x_j`.
    pub fn grad_op(&self, j: usize) -> &Arc<CsrMatrix> {
        &self.grad_ops[j]
    }

    /// Sparse operator for `∂²/∂x_j∂x_k` (symmetrized composition).
    pub fn hess_op(&self, j: usize, k: usize) -> &Arc<CsrMatrix> {
        &self.hess_ops[j * self.dim + k]
    }

    /// Sum of the diagonal second-derivative operators.
    pub fn laplacian_op(&self) -> CsrMatrix {
        let mut acc = (*self.hess_ops[0]).clone();
        for j in 1..self.dim {
            acc = acc.linear_combination(1.0, self.hess_op(j, j), 1.0);
        }
        acc
    }

    /// `∂⁴/∂x_j⁴` as the second-derivative operator applied twice.
    pub fn fourth_op(&self, j: usize) -> CsrMatrix {
        let h = self.hess_op(j, j);
        h.compose(h)
    }

    /// `N × (c·d)` with `∂u_c/∂x_j` at column `c·d + j`.
    pub fn gradient(&self, field: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(field)?;
        let (n, c) = field.dim();
        let d = self.dim;
        let mut out = Array2::zeros((n, c * d));
        for j in 0..d {
            let g = self.grad_ops[j].matmul(field);
            for ch in 0..c {
                out.column_mut(ch * d + j).assign(&g.column(ch));
            }
        }
        Ok(out)
    }

    /// `N × (c·d·d)` with `∂²u_c/∂x_j∂x_k` at column `c·d² + j·d + k`.
    pub fn hessian(&self, field: &ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check(field)?;
        let (n, c) = field.dim();
        let d = self.dim;
        let mut out = Array2::zeros((n, c * d * d));
        for j in 0..d {
            for k in 0..d {
                let h = self.hess_op(j, k).matmul(field);
                for ch in 0..c {
                    out.column_mut(ch * d * d + j * d + k).assign(&h.column(ch));
                }
            }
        }
        Ok(out)
    }

    /// `∂u/∂x_j` on a tape, same channel count as `u`.
    pub fn grad_var(&self, tape: &mut Tape, u: Var, j: usize) -> Var {
        tape.sparse(self.grad_ops[j].clone(), u)
    }

    pub fn hess_var(&self, tape: &mut Tape, u: Var, j: usize, k: usize) -> Var {
        tape.sparse(self.hess_op(j, k).clone(), u)
    }

    fn check(&self, field: &ArrayView2<f64>) -> Result<()> {
        if field.nrows() != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "field has {} rows, stencils cover {} nodes",
                field.nrows(),
                self.len()
            )));
        }
        Ok(())
    }

    /// Moment matrix of node `p` without regularization, `d × d` row-major.
    pub fn moment_matrix(&self, cloud: &PointCloud, p: usize) -> Array2<f64> {
        let d = self.dim;
        let nbrs = &self.neighbor_idx[p];
        let mut m = Array2::zeros((d, d));
        for &i in nbrs {
            let dx = cloud.displacement(p, i);
            for a in 0..d {
                for b in 0..d {
                    m[[a, b]] += dx[a] * dx[b] / nbrs.len() as f64;
                }
            }
        }
        m
    }
}
