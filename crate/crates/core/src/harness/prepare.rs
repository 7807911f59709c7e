//! Graphs, stencils and operator inputs for a set of instances.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::GeometryStrategy;
use crate::graph::{cache_key, load_or_build, GraphCacheEntry, GraphParams, PointCloud, SpatialGraph};
use crate::loss::{Dirichlet, ModelInput, RolloutSample, StationarySample};
use crate::problems::{Instance, PreparedInput, Problem};
use crate::stencil::{StencilParams, StencilSet};

/// Graph and stencils of one point cloud, shared by every instance on it.
#[derive(Debug)]
pub struct Discretization {
    pub graph: SpatialGraph,
    pub stencils: StencilSet,
}

#[derive(Debug)]
pub struct PreparedSample {
    pub instance: Instance,
    pub disc: Arc<Discretization>,
    pub input: Option<PreparedInput>,
    pub dirichlet: Option<Dirichlet>,
    pub pde_nodes: Arc<Vec<usize>>,
}

impl PreparedSample {
    pub fn graph(&self) -> &SpatialGraph {
        &self.disc.graph
    }

    pub fn model_input(&self) -> Result<ModelInput<'_>> {
        match &self.input {
            Some(PreparedInput::Nodes(a)) => Ok(ModelInput::Nodes(a)),
            Some(PreparedInput::Boundary { values, coords }) => Ok(ModelInput::Boundary(values, coords)),
            None => Err(Error::Config("time-dependent samples have no stationary input".into())),
        }
    }

    pub fn stationary(&self) -> Result<StationarySample<'_>> {
        Ok(StationarySample {
            graph: &self.disc.graph,
            stencils: Some(&self.disc.stencils),
            input: self.model_input()?,
            problem_inputs: self.instance.input.as_ref(),
            pde_nodes: &self.pde_nodes,
            dirichlet: self.dirichlet.as_ref(),
        })
    }

    pub fn rollout(&self) -> RolloutSample<'_> {
        RolloutSample {
            graph: &self.disc.graph,
            stencils: Some(&self.disc.stencils),
            history: &self.instance.history,
            problem_inputs: self.instance.input.as_ref(),
            pde_nodes: &self.pde_nodes,
            dirichlet: self.dirichlet.as_ref(),
        }
    }
}

/// Build (or load from `cache`) one discretization per distinct cloud and
/// attach it to every instance.
pub fn prepare(
    problem: &Problem,
    strategy: GeometryStrategy,
    instances: Vec<Instance>,
    graph_params: &GraphParams,
    stencil_params: &StencilParams,
    cache: Option<&Path>,
) -> Result<Vec<PreparedSample>> {
    if let Some(dir) = cache {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let keys: Vec<String> = instances
        .iter()
        .map(|i| cache_key(&i.cloud, graph_params, Some(stencil_params)))
        .collect();
    let mut unique: Vec<(String, &PointCloud)> = Vec::new();
    let mut seen = HashMap::new();
    for (k, inst) in keys.iter().zip(&instances) {
        if !seen.contains_key(k) {
            seen.insert(k.clone(), unique.len());
            unique.push((k.clone(), &inst.cloud));
        }
    }
    let built = unique
        .par_iter()
        .map(|(_, cloud)| {
            let cloud = (*cloud).clone();
            let entry = match cache {
                Some(dir) => load_or_build(dir, cloud, graph_params, Some(stencil_params))?,
                None => GraphCacheEntry::build(cloud, graph_params, Some(stencil_params))?,
            };
            Ok(Arc::new(Discretization {
                graph: entry.graph,
                stencils: entry.stencils.expect("stencils requested"),
            }))
        })
        .collect::<Result<Vec<_>>>()?;
    instances
        .into_iter()
        .zip(keys)
        .map(|(instance, key)| {
            let disc = built[seen[&key]].clone();
            let input = instance.model_input(problem, strategy)?;
            Ok(PreparedSample {
                dirichlet: instance.dirichlet(),
                pde_nodes: Arc::new(instance.pde_nodes()),
                input,
                disc,
                instance,
            })
        })
        .collect()
}
