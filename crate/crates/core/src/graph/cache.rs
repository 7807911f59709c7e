//! On-disk cache of prepared graphs and their stencils.
//!
//! A cache file is a container of kind `graph` with arrays `coords`,
//! `boundary_mask`, `segment_id`, `edges` (`E × 2` target/source pairs),
//! `eigvals`, `eigvecs`, `lipschitz_emb` and optionally `stencil_offsets`,
//! `stencil_neighbors`. Build parameters live in the JSON metadata. Files
//! are keyed by a SHA-256 over the coordinates and parameters.

use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use super::{GraphParams, PointCloud, SpatialGraph};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::stencil::{StencilParams, StencilSet};

pub const GRAPH_KIND: &str = "graph";

/// A prepared graph together with the stencils built on it.
#[derive(Clone, Debug)]
pub struct GraphCacheEntry {
    pub graph: SpatialGraph,
    pub params: GraphParams,
    pub stencils: Option<StencilSet>,
    pub stencil_params: Option<StencilParams>,
}

impl GraphCacheEntry {
    pub fn build(cloud: PointCloud, params: &GraphParams, stencil_params: Option<&StencilParams>) -> Result<Self> {
        let graph = SpatialGraph::prepare(cloud, params)?;
        let stencils = match stencil_params {
            Some(sp) => Some(StencilSet::with_params(&graph.cloud, sp)?),
            None => None,
        };
        Ok(Self {
            graph,
            params: params.clone(),
            stencils,
            stencil_params: stencil_params.cloned(),
        })
    }
}

/// Hex SHA-256 of the cloud and every parameter that affects the build.
pub fn cache_key(cloud: &PointCloud, params: &GraphParams, stencil_params: Option<&StencilParams>) -> String {
    let mut h = Sha256::new();
    h.update((cloud.len() as u64).to_le_bytes());
    h.update((cloud.dim() as u64).to_le_bytes());
    for v in cloud.coords.iter() {
        h.update(v.to_le_bytes());
    }
    for &b in &cloud.boundary_mask {
        h.update([b as u8]);
    }
    for &s in &cloud.segment_id {
        h.update(s.to_le_bytes());
    }
    h.update(serde_json::to_vec(&cloud.period).expect("period serializes"));
    h.update(serde_json::to_vec(params).expect("params serialize"));
    h.update(serde_json::to_vec(&stencil_params).expect("stencil params serialize"));
    hex::encode(h.finalize())
}

pub fn save_graph(path: &Path, entry: &GraphCacheEntry) -> Result<()> {
    let g = &entry.graph;
    let meta = serde_json::json!({
        "params": entry.params,
        "k": g.k,
        "embedding_seed": g.embedding_seed,
        "period": g.cloud.period,
        "stencil_params": entry.stencil_params,
        "stencil_radius": entry.stencils.as_ref().map(|s| s.radius),
        "stencil_max_neighbors": entry.stencils.as_ref().map(|s| s.max_neighbors),
    });
    let mut c = Container::new(GRAPH_KIND, meta);
    c.insert_mat("coords", &g.cloud.coords);
    c.insert_bools("boundary_mask", &g.cloud.boundary_mask);
    c.insert_i64("segment_id", g.cloud.segment_id.clone());
    let edges: Vec<i64> = g.edges.iter().flat_map(|&(t, s)| [t as i64, s as i64]).collect();
    c.insert("edges", vec![g.edges.len(), 2], crate::container::ArrayData::I64(edges));
    c.insert_f64("eigvals", vec![g.eigvals.len()], g.eigvals.to_vec());
    c.insert_mat("eigvecs", &g.eigvecs);
    c.insert_mat("lipschitz_emb", &g.lipschitz_emb);
    if let Some(s) = &entry.stencils {
        let mut offsets = vec![0i64];
        let mut flat = Vec::new();
        for nb in &s.neighbor_idx {
            flat.extend(nb.iter().map(|&i| i as i64));
            offsets.push(flat.len() as i64);
        }
        c.insert_i64("stencil_offsets", offsets);
        c.insert_i64("stencil_neighbors", flat);
    }
    c.write(path)
}

pub fn load_graph(path: &Path) -> Result<GraphCacheEntry> {
    let c = Container::read_kind(path, GRAPH_KIND)?;
    let field = |name: &str| {
        c.meta
            .get(name)
            .cloned()
            .ok_or_else(|| Error::SchemaMismatch(format!("graph cache missing meta field {name}")))
    };
    let params: GraphParams =
        serde_json::from_value(field("params")?).map_err(|e| Error::SchemaMismatch(format!("graph params: {e}")))?;
    let period: Option<Vec<f64>> =
        serde_json::from_value(field("period")?).map_err(|e| Error::SchemaMismatch(format!("period: {e}")))?;
    let k = field("k")?.as_u64().unwrap_or(params.k as u64) as usize;
    let embedding_seed = field("embedding_seed")?.as_u64().unwrap_or(params.seed);
    let cloud = PointCloud {
        coords: c.mat("coords")?,
        boundary_mask: c.bools("boundary_mask")?,
        segment_id: c.i64s("segment_id")?.to_vec(),
        period,
    };
    let n = cloud.len();
    let raw = c.i64s("edges")?;
    let mut lists = vec![Vec::new(); n];
    for pair in raw.chunks_exact(2) {
        let (t, s) = (pair[0] as usize, pair[1] as usize);
        if t >= n || s >= n {
            return Err(Error::SchemaMismatch(format!(
                "edge ({t}, {s}) out of range for {n} nodes"
            )));
        }
        lists[t].push(s);
    }
    let mut graph = SpatialGraph::from_neighbors(cloud, k, lists)?;
    graph.eigvals = c.vector("eigvals")?;
    graph.eigvecs = c.mat("eigvecs")?;
    graph.lipschitz_emb = c.mat("lipschitz_emb")?;
    graph.embedding_seed = embedding_seed;
    if graph.eigvecs.nrows() != n || graph.lipschitz_emb.nrows() != n {
        return Err(Error::SchemaMismatch("spectral arrays do not match node count".into()));
    }
    let stencil_params: Option<StencilParams> = c
        .meta
        .get("stencil_params")
        .cloned()
        .map(serde_json::from_value)
        .transpose()
        .map_err(|e| Error::SchemaMismatch(format!("stencil params: {e}")))?
        .flatten();
    let stencils = if c.contains("stencil_offsets") {
        let offsets = c.i64s("stencil_offsets")?;
        let flat = c.i64s("stencil_neighbors")?;
        if offsets.len() != n + 1 {
            return Err(Error::SchemaMismatch("stencil offsets do not match node count".into()));
        }
        let nbrs: Vec<Vec<usize>> = offsets
            .windows(2)
            .map(|w| flat[w[0] as usize..w[1] as usize].iter().map(|&i| i as usize).collect())
            .collect();
        let radius = field("stencil_radius")?.as_f64().unwrap_or(0.0);
        let max_nb = field("stencil_max_neighbors")?.as_u64().unwrap_or(0) as usize;
        let eps_rel = stencil_params.as_ref().map(|p| p.eps_rel).unwrap_or(1e-8);
        Some(StencilSet::from_neighbors(&graph.cloud, radius, max_nb, nbrs, eps_rel)?)
    } else {
        None
    };
    Ok(GraphCacheEntry {
        graph,
        params,
        stencils,
        stencil_params,
    })
}

pub fn cache_path(dir: &Path, key: &str) -> PathBuf {
    dir.join(format!("graph_{}.pgno", &key[..16]))
}

/// Load the cached build for this cloud and parameters, or build and store it.
pub fn load_or_build(
    dir: &Path,
    cloud: PointCloud,
    params: &GraphParams,
    stencil_params: Option<&StencilParams>,
) -> Result<GraphCacheEntry> {
    let key = cache_key(&cloud, params, stencil_params);
    let path = cache_path(dir, &key);
    if path.exists() {
        match load_graph(&path) {
            Ok(entry) if entry.graph.cloud == cloud => return Ok(entry),
            Ok(_) => log::warn!("graph cache {} does not match its key, rebuilding", path.display()),
            Err(e) => log::warn!("unreadable graph cache {}: {e}, rebuilding", path.display()),
        }
    }
    let entry = GraphCacheEntry::build(cloud, params, stencil_params)?;
    save_graph(&path, &entry)?;
    Ok(entry)
}
