//! Graph representation of a discretized spatial domain.
//!
//! A [`SpatialGraph`] is built in three stages: k-nearest-neighbor
//! connectivity ([`build_knn_graph`]), the truncated eigenbasis of the
//! symmetric normalized Laplacian ([`SpatialGraph::compute_spectrum`]) and
//! anchor-distance node embeddings used by the edge gates
//! ([`SpatialGraph::compute_lipschitz_embeddings`]). Once built, a graph is
//! immutable and can be shared freely between threads.

mod cache;
mod embedding;
mod spectrum;

use std::collections::VecDeque;
use std::sync::Arc;

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use cache::{cache_key, load_graph, load_or_build, save_graph, GraphCacheEntry};
pub use spectrum::normalized_laplacian;

/// A point cloud with boundary annotations.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    /// `N × d` coordinates.
    pub coords: Array2<f64>,
    pub boundary_mask: Vec<bool>,
    /// Segment index for boundary nodes, `-1` for interior nodes.
    pub segment_id: Vec<i64>,
    /// Per-dimension period for wrap-around domains; `None` when nothing wraps.
    pub period: Option<Vec<f64>>,
}

impl PointCloud {
    /// Interior-only cloud without periodicity.
    pub fn interior(coords: Array2<f64>) -> Self {
        let n = coords.nrows();
        Self {
            coords,
            boundary_mask: vec![false; n],
            segment_id: vec![-1; n],
            period: None,
        }
    }

    pub fn periodic(coords: Array2<f64>, period: Vec<f64>) -> Self {
        let mut c = Self::interior(coords);
        c.period = Some(period);
        c
    }

    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.coords.ncols()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if self.boundary_mask.len() != n || self.segment_id.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "point cloud with {n} nodes has {} mask entries and {} segment ids",
                self.boundary_mask.len(),
                self.segment_id.len()
            )));
        }
        if let Some(p) = &self.period {
            if p.len() != self.dim() {
                return Err(Error::ShapeMismatch(format!(
                    "period has {} entries for {}-D coordinates",
                    p.len(),
                    self.dim()
                )));
            }
        }
        for (i, (&b, &s)) in self.boundary_mask.iter().zip(&self.segment_id).enumerate() {
            if b != (s >= 0) {
                return Err(Error::DegenerateInput(format!(
                    "node {i}: boundary flag {b} inconsistent with segment id {s}"
                )));
            }
        }
        if self.coords.iter().any(|v| !v.is_finite()) {
            return Err(Error::DegenerateInput("non-finite coordinate".into()));
        }
        Ok(())
    }

    /// `b − a`, using the minimum image along periodic dimensions.
    pub fn displacement(&self, a: usize, b: usize) -> Vec<f64> {
        displacement(self.coords.row(a), self.coords.row(b), self.period.as_deref())
    }

    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.displacement(a, b).iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn bounding_box_diagonal(&self) -> f64 {
        (0..self.dim())
            .map(|j| {
                let col = self.coords.column(j);
                let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
                let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                (hi - lo).powi(2)
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Reorder nodes so that new node `i` is old node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            coords: self.coords.select(ndarray::Axis(0), perm),
            boundary_mask: perm.iter().map(|&i| self.boundary_mask[i]).collect(),
            segment_id: perm.iter().map(|&i| self.segment_id[i]).collect(),
            period: self.period.clone(),
        }
    }
}

pub fn displacement(a: ArrayView1<f64>, b: ArrayView1<f64>, period: Option<&[f64]>) -> Vec<f64> {
    a.iter()
        .zip(b.iter())
        .enumerate()
        .map(|(j, (&x, &y))| {
            let mut d = y - x;
            if let Some(p) = period {
                let p = p[j];
                if p > 0.0 {
                    d -= p * (d / p).round();
                }
            }
            d
        })
        .collect()
}

/// Build parameters recorded with every graph.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphParams {
    pub k: usize,
    /// Number of Laplacian eigenpairs kept; `None` selects `min(N/4, 128)`.
    pub modes: Option<usize>,
    pub n_emb: usize,
    pub seed: u64,
    /// Perturb duplicate points instead of rejecting them.
    pub jitter_duplicates: bool,
}

impl GraphParams {
    pub fn for_dim(d: usize) -> Self {
        Self {
            k: if d == 1 { 2 } else { 6 },
            modes: None,
            n_emb: 16,
            seed: 0,
            jitter_duplicates: false,
        }
    }

    pub fn resolved_modes(&self, n: usize) -> usize {
        self.modes.unwrap_or_else(|| default_modes(n)).min(n).max(1)
    }
}

pub fn default_modes(n: usize) -> usize {
    (n / 4).clamp(1, 128)
}

/// Graph over a point cloud, plus its truncated spectrum and node embeddings.
#[derive(Clone, Debug)]
pub struct SpatialGraph {
    pub cloud: PointCloud,
    pub k: usize,
    /// Sorted neighbor lists of the symmetrized k-NN graph.
    pub neighbors: Vec<Vec<usize>>,
    /// Directed pairs `(target, source)`, both directions of every undirected
    /// edge, sorted lexicographically.
    pub edges: Vec<(usize, usize)>,
    /// Ascending eigenvalues of the normalized Laplacian (empty until computed).
    pub eigvals: Array1<f64>,
    /// `N × m` eigenvectors with orthonormal columns.
    pub eigvecs: Array2<f64>,
    /// `N × n_emb` normalized anchor distances (empty until computed).
    pub lipschitz_emb: Array2<f64>,
    pub embedding_seed: u64,
    edge_index: EdgeIndex,
}

/// Edge arrays in gather/scatter form.
#[derive(Clone, Debug)]
pub struct EdgeIndex {
    pub targets: Arc<Vec<usize>>,
    pub sources: Arc<Vec<usize>>,
    /// `E × 1` Euclidean (minimum-image) edge lengths.
    pub lengths: Arc<Array2<f64>>,
}

impl SpatialGraph {
    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.cloud.dim()
    }

    pub fn coords(&self) -> &Array2<f64> {
        &self.cloud.coords
    }

    pub fn boundary_mask(&self) -> &[bool] {
        &self.cloud.boundary_mask
    }

    pub fn segment_id(&self) -> &[i64] {
        &self.cloud.segment_id
    }

    pub fn modes(&self) -> usize {
        self.eigvecs.ncols()
    }

    pub fn has_spectrum(&self) -> bool {
        self.eigvecs.ncols() > 0
    }

    pub fn has_embeddings(&self) -> bool {
        self.lipschitz_emb.ncols() > 0
    }

    pub fn degree(&self, u: usize) -> usize {
        self.neighbors[u].len()
    }

    pub fn edge_index(&self) -> &EdgeIndex {
        &self.edge_index
    }

    pub fn interior_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.cloud.boundary_mask[i]).collect()
    }

    pub fn boundary_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.cloud.boundary_mask[i]).collect()
    }

    /// Dense symmetric 0/1 adjacency.
    pub fn adjacency_dense(&self) -> Array2<f64> {
        let n = self.len();
        let mut a = Array2::zeros((n, n));
        for &(t, s) in &self.edges {
            a[[t, s]] = 1.0;
        }
        a
    }

    pub fn is_adjacent(&self, u: usize, v: usize) -> bool {
        self.neighbors[u].binary_search(&v).is_ok()
    }

    /// Hop distances from `src` (`usize::MAX` for unreachable nodes).
    pub fn bfs(&self, src: usize) -> Vec<usize> {
        bfs(&self.neighbors, src)
    }

    /// Build from explicit neighbor lists (symmetrized here).
    pub fn from_neighbors(cloud: PointCloud, k: usize, lists: Vec<Vec<usize>>) -> Result<Self> {
        cloud.validate()?;
        let n = cloud.len();
        if lists.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "{} neighbor lists for {n} nodes",
                lists.len()
            )));
        }
        let mut neighbors = vec![Vec::new(); n];
        for (u, list) in lists.into_iter().enumerate() {
            for v in list {
                if v == u || v >= n {
                    continue;
                }
                neighbors[u].push(v);
                neighbors[v].push(u);
            }
        }
        for l in &mut neighbors {
            l.sort_unstable();
            l.dedup();
        }
        let components = count_components(&neighbors);
        if components > 1 {
            return Err(Error::DisconnectedGraph { components });
        }
        let mut edges = Vec::new();
        for (u, l) in neighbors.iter().enumerate() {
            for &v in l {
                edges.push((u, v));
            }
        }
        let edge_index = EdgeIndex {
            targets: Arc::new(edges.iter().map(|e| e.0).collect()),
            sources: Arc::new(edges.iter().map(|e| e.1).collect()),
            lengths: Arc::new(Array2::from_shape_fn((edges.len(), 1), |(e, _)| {
                cloud.distance(edges[e].0, edges[e].1)
            })),
        };
        let n_dim = n;
        Ok(Self {
            cloud,
            k,
            neighbors,
            edges,
            eigvals: Array1::zeros(0),
            eigvecs: Array2::zeros((n_dim, 0)),
            lipschitz_emb: Array2::zeros((n_dim, 0)),
            embedding_seed: 0,
            edge_index,
        })
    }

    /// Relabel nodes: new node `i` is old node `perm[i]`. Spectra and
    /// embeddings are row-permuted, not recomputed.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let n = self.len();
        let mut inv = vec![usize::MAX; n];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        if perm.len() != n || inv.contains(&usize::MAX) {
            return Err(Error::ShapeMismatch("not a permutation of the graph nodes".into()));
        }
        let lists = perm
            .iter()
            .map(|&p| self.neighbors[p].iter().map(|&q| inv[q]).collect())
            .collect();
        let mut g = Self::from_neighbors(self.cloud.permuted(perm), self.k, lists)?;
        g.eigvals = self.eigvals.clone();
        g.eigvecs = self.eigvecs.select(ndarray::Axis(0), perm);
        g.lipschitz_emb = self.lipschitz_emb.select(ndarray::Axis(0), perm);
        g.embedding_seed = self.embedding_seed;
        Ok(g)
    }

    /// k-NN connectivity, truncated spectrum and embeddings in one call.
    pub fn prepare(cloud: PointCloud, params: &GraphParams) -> Result<Self> {
        let n = cloud.len();
        let g = build_knn_graph_with(cloud, params.k, params.jitter_duplicates, params.seed)?;
        let g = g.compute_spectrum(params.resolved_modes(n))?;
        Ok(g.compute_lipschitz_embeddings(params.n_emb, params.seed))
    }
}

/// Symmetrized k-NN graph. Duplicate points are rejected.
pub fn build_knn_graph(cloud: PointCloud, k: usize) -> Result<SpatialGraph> {
    build_knn_graph_with(cloud, k, false, 0)
}

/// Symmetrized k-NN graph; with `jitter_duplicates`, coincident points are
/// perturbed by `1e-10 ×` the bounding-box diagonal instead of rejected.
pub fn build_knn_graph_with(
    mut cloud: PointCloud,
    k: usize,
    jitter_duplicates: bool,
    seed: u64,
) -> Result<SpatialGraph> {
    cloud.validate()?;
    let n = cloud.len();
    if k == 0 {
        return Err(Error::DegenerateInput("k must be positive".into()));
    }
    if n < k + 1 {
        return Err(Error::DegenerateInput(format!(
            "{n} points cannot support k = {k} neighbors"
        )));
    }
    let dups = duplicate_pairs(&cloud);
    if !dups.is_empty() {
        let distinct = n - {
            let mut dup_nodes: Vec<usize> = dups.iter().map(|&(_, j)| j).collect();
            dup_nodes.sort_unstable();
            dup_nodes.dedup();
            dup_nodes.len()
        };
        if distinct < k + 1 {
            return Err(Error::DegenerateInput(format!(
                "only {distinct} distinct points for k = {k}"
            )));
        }
        if !jitter_duplicates {
            let (i, j) = dups[0];
            return Err(Error::DegenerateInput(format!(
                "duplicate points {i} and {j} ({} duplicate pairs)",
                dups.len()
            )));
        }
        let scale = 1e-10 * cloud.bounding_box_diagonal().max(f64::MIN_POSITIVE);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6a09_e667_f3bc_c908);
        for &(_, j) in &dups {
            for x in cloud.coords.row_mut(j) {
                *x += scale * rng.gen_range(-1.0..1.0);
            }
        }
    }
    let mut lists = Vec::with_capacity(n);
    let mut cand: Vec<(f64, usize)> = Vec::with_capacity(n);
    for u in 0..n {
        cand.clear();
        for v in 0..n {
            if v != u {
                cand.push((cloud.distance(u, v), v));
            }
        }
        cand.select_nth_unstable_by(k - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<(f64, usize)> = cand[..k].to_vec();
        chosen.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        lists.push(chosen.into_iter().map(|(_, v)| v).collect());
    }
    SpatialGraph::from_neighbors(cloud, k, lists)
}

fn duplicate_pairs(cloud: &PointCloud) -> Vec<(usize, usize)> {
    let n = cloud.len();
    let mut order: Vec<usize> = (0..n).collect();
    let c = &cloud.coords;
    order.sort_by(|&a, &b| {
        c.row(a)
            .iter()
            .zip(c.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut out = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && c.row(order[j]) == c.row(order[i]) {
            let (a, b) = (order[i].min(order[j]), order[i].max(order[j]));
            out.push((a, b));
            j += 1;
        }
        i = j;
    }
    if cloud.period.is_some() {
        // wrap-around images of the same point
        for a in 0..n {
            for b in a + 1..n {
                if cloud.distance(a, b) == 0.0 && !out.contains(&(a, b)) {
                    out.push((a, b));
                }
            }
        }
    }
    out.sort_unstable();
    out
}

pub(crate) fn bfs(neighbors: &[Vec<usize>], src: usize) -> Vec<usize> {
    let mut dist = vec![usize::MAX; neighbors.len()];
    let mut q = VecDeque::new();
    dist[src] = 0;
    q.push_back(src);
    while let Some(u) = q.pop_front() {
        for &v in &neighbors[u] {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                q.push_back(v);
            }
        }
    }
    dist
}

fn count_components(neighbors: &[Vec<usize>]) -> usize {
    let n = neighbors.len();
    let mut seen = vec![false; n];
    let mut count = 0;
    for s in 0..n {
        if seen[s] {
            continue;
        }
        count += 1;
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(u) = stack.pop() {
            for &v in &neighbors[u] {
                if !seen[v] {
                    seen[v] = true;
                    stack.push(v);
                }
            }
        }
    }
    count
}
