//! Dataset files: many problem instances in one container of kind
//! `"dataset"`.
//!
//! Metadata holds `{"problem": <resolved Problem>, "n_samples", "split"}`.
//! Sample `i` stores its arrays under the prefix `sample{i:05}/`:
//!
//! | name | dtype | shape |
//! |---|---|---|
//! | `coords` | f64 | N × d |
//! | `boundary_mask` | u8 | N |
//! | `segment_id` | i64 | N |
//! | `period` (periodic clouds) | f64 | d |
//! | `input` (optional) | f64 | N × c_in |
//! | `bc_coords`, `bc_values` (optional) | f64 | n_b × d, n_b × c |
//! | `bc_segment_id`, `bc_node_idx` (optional) | i64 | n_b |
//! | `geometry` | f64 | len μ |
//! | `reference` (optional) | f64 | N × c |
//! | `trajectory` (optional) | f64 | T × N × c |
//! | `times` (with `trajectory`) | f64 | T |
//! | `history_len` | i64 | 1 |
//!
//! plus a top-level `seeds` (i64, bit-cast from u64).

use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use crate::autodiff::Mat;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::geometry::BoundaryData;
use crate::graph::PointCloud;
use crate::problems::{Instance, Problem};
use crate::solvers::{ReferenceTrajectory, SolverMeta};

pub const DATASET_KIND: &str = "dataset";

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub problem: Problem,
    pub instances: Vec<Instance>,
}

fn key(i: usize, field: &str) -> String {
    format!("sample{i:05}/{field}")
}

/// Output times of an instance's trajectory.
fn trajectory_times(problem: &Problem, len: usize) -> Vec<f64> {
    let dt = problem.time.map_or(1.0, |t| t.dt);
    (0..len).map(|j| problem.transient + j as f64 * dt).collect()
}

impl Dataset {
    /// Sample every seed in parallel; order follows `seeds`.
    pub fn generate(problem: &Problem, seeds: &[u64]) -> Result<Self> {
        let instances = seeds
            .par_iter()
            .map(|&s| problem.sample(s))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            problem: problem.clone(),
            instances,
        })
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn to_container(&self, split: &str) -> Container {
        let meta = json!({
            "problem": self.problem,
            "n_samples": self.instances.len(),
            "split": split,
        });
        let mut c = Container::new(DATASET_KIND, meta);
        c.insert_i64("seeds", self.instances.iter().map(|s| s.seed as i64).collect());
        for (i, s) in self.instances.iter().enumerate() {
            c.insert_mat(key(i, "coords"), &s.cloud.coords);
            c.insert_bools(key(i, "boundary_mask"), &s.cloud.boundary_mask);
            c.insert_i64(key(i, "segment_id"), s.cloud.segment_id.clone());
            if let Some(p) = &s.cloud.period {
                c.insert_f64(key(i, "period"), vec![p.len()], p.clone());
            }
            if let Some(m) = &s.input {
                c.insert_mat(key(i, "input"), m);
            }
            if let Some(b) = &s.boundary {
                c.insert_mat(key(i, "bc_coords"), &b.bc_coords);
                c.insert_mat(key(i, "bc_values"), &b.bc_values);
                c.insert_i64(key(i, "bc_segment_id"), b.segment_id.clone());
                if let Some(idx) = &b.node_idx {
                    c.insert_i64(key(i, "bc_node_idx"), idx.iter().map(|&v| v as i64).collect());
                }
            }
            c.insert_f64(key(i, "geometry"), vec![s.geometry.len()], s.geometry.clone());
            if let Some(m) = &s.reference {
                c.insert_mat(key(i, "reference"), m);
            }
            if let Some(tr) = &s.trajectory {
                let (n, ch) = tr[0].dim();
                let data = tr.iter().flat_map(|m| m.iter().copied()).collect();
                c.insert_f64(key(i, "trajectory"), vec![tr.len(), n, ch], data);
                c.insert_f64(
                    key(i, "times"),
                    vec![tr.len()],
                    trajectory_times(&self.problem, tr.len()),
                );
            }
            c.insert_i64(key(i, "history_len"), vec![s.history.len() as i64]);
        }
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        if c.kind != DATASET_KIND {
            return Err(Error::SchemaMismatch(format!("expected a dataset, found `{}`", c.kind)));
        }
        let problem: Problem = serde_json::from_value(c.meta["problem"].clone())
            .map_err(|e| Error::SchemaMismatch(format!("dataset problem metadata: {e}")))?;
        let seeds = c.i64s("seeds")?;
        let instances = (0..seeds.len())
            .map(|i| read_instance(c, i, seeds[i] as u64))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { problem, instances })
    }

    pub fn write(&self, path: &Path, split: &str) -> Result<()> {
        self.to_container(split).write(path)
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read_kind(path, DATASET_KIND)?)
    }
}

fn read_trajectory(c: &Container, i: usize) -> Result<Option<Vec<Mat>>> {
    let name = key(i, "trajectory");
    if !c.contains(&name) {
        return Ok(None);
    }
    let (shape, data) = c.f64s(&name)?;
    if shape.len() != 3 {
        return Err(Error::SchemaMismatch(format!(
            "{name} must be 3-D, has shape {shape:?}"
        )));
    }
    let (n, ch) = (shape[1], shape[2]);
    Ok(Some(
        data.chunks(n * ch)
            .map(|s| Array2::from_shape_vec((n, ch), s.to_vec()).expect("chunk size matches"))
            .collect(),
    ))
}

fn read_instance(c: &Container, i: usize, seed: u64) -> Result<Instance> {
    let opt_mat = |f: &str| -> Result<Option<Mat>> {
        let k = key(i, f);
        if c.contains(&k) {
            c.mat(&k).map(Some)
        } else {
            Ok(None)
        }
    };
    let coords = c.mat(&key(i, "coords"))?;
    let period = if c.contains(&key(i, "period")) {
        Some(c.f64s(&key(i, "period"))?.1.to_vec())
    } else {
        None
    };
    let cloud = PointCloud {
        coords,
        boundary_mask: c.bools(&key(i, "boundary_mask"))?,
        segment_id: c.i64s(&key(i, "segment_id"))?.to_vec(),
        period,
    };
    cloud.validate()?;
    let boundary = match (opt_mat("bc_coords")?, opt_mat("bc_values")?) {
        (Some(bc_coords), Some(bc_values)) => {
            let node_idx = if c.contains(&key(i, "bc_node_idx")) {
                Some(c.i64s(&key(i, "bc_node_idx"))?.iter().map(|&v| v as usize).collect())
            } else {
                None
            };
            let b = BoundaryData {
                bc_coords,
                bc_values,
                segment_id: c.i64s(&key(i, "bc_segment_id"))?.to_vec(),
                node_idx,
            };
            b.validate()?;
            Some(b)
        }
        (None, None) => None,
        _ => return Err(Error::SchemaMismatch(format!("sample {i}: partial boundary data"))),
    };
    let trajectory = read_trajectory(c, i)?;
    let given = c.i64s(&key(i, "history_len"))?.first().copied().unwrap_or(0) as usize;
    let history = match &trajectory {
        Some(t) if given <= t.len() => t[..given].to_vec(),
        Some(_) => {
            return Err(Error::SchemaMismatch(format!(
                "sample {i}: history longer than trajectory"
            )))
        }
        None => Vec::new(),
    };
    Ok(Instance {
        seed,
        cloud,
        input: opt_mat("input")?,
        boundary,
        geometry: c.f64s(&key(i, "geometry"))?.1.to_vec(),
        reference: opt_mat("reference")?,
        trajectory,
        history,
    })
}

/// Seeds for the train and test splits: two independent ChaCha streams of
/// the master seed, with any test seed that also appears in train redrawn.
pub fn split_seeds(seed: u64, n_train: usize, n_test: usize) -> (Vec<u64>, Vec<u64>) {
    let mut train_rng = ChaCha8Rng::seed_from_u64(seed);
    train_rng.set_stream(0);
    let mut test_rng = ChaCha8Rng::seed_from_u64(seed);
    test_rng.set_stream(1);
    let train: Vec<u64> = (0..n_train).map(|_| train_rng.gen()).collect();
    let mut test = Vec::with_capacity(n_test);
    while test.len() < n_test {
        let s: u64 = test_rng.gen();
        if !train.contains(&s) && !test.contains(&s) {
            test.push(s);
        }
    }
    (train, test)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetFiles {
    pub train: PathBuf,
    pub test: Option<PathBuf>,
}

/// Write `{problem}_train.pgno` and, when `n_test > 0`, `{problem}_test.pgno`
/// into `out_dir`.
pub fn generate_dataset(
    problem: &Problem,
    n_train: usize,
    n_test: usize,
    seed: u64,
    out_dir: &Path,
) -> Result<DatasetFiles> {
    let (train_seeds, test_seeds) = split_seeds(seed, n_train, n_test);
    let train = out_dir.join(format!("{}_train.pgno", problem.name));
    Dataset::generate(problem, &train_seeds)?.write(&train, "train")?;
    let test = if n_test > 0 {
        let p = out_dir.join(format!("{}_test.pgno", problem.name));
        Dataset::generate(problem, &test_seeds)?.write(&p, "test")?;
        Some(p)
    } else {
        None
    };
    Ok(DatasetFiles { train, test })
}

/// Ground truth read from a dataset file.
#[derive(Clone, Debug, PartialEq)]
pub enum ExternalReference {
    Field(Mat),
    Trajectory(Vec<f64>, Vec<Mat>),
}

impl ExternalReference {
    pub fn into_trajectory(self) -> Option<ReferenceTrajectory> {
        match self {
            Self::Field(_) => None,
            Self::Trajectory(times, states) => Some(ReferenceTrajectory {
                meta: SolverMeta {
                    method: "external".into(),
                    dt_internal: times.get(1).map_or(0.0, |t| t - times[0]),
                    resolution: states.first().map_or(0, |s| s.nrows()),
                    transient_cut: times.first().copied().unwrap_or(0.0),
                },
                times,
                states,
            }),
        }
    }
}

/// Tolerance on node coordinates when matching an external file to a graph.
pub const COORDS_TOLERANCE: f64 = 1e-9;

/// Read sample `sample`'s reference from a dataset file and check that its
/// nodes match `coords` within [`COORDS_TOLERANCE`].
pub fn load_external_reference(path: &Path, sample: usize, coords: &Array2<f64>) -> Result<ExternalReference> {
    let c = Container::read_kind(path, DATASET_KIND)?;
    let file_coords = c
        .mat(&key(sample, "coords"))
        .map_err(|_| Error::SchemaMismatch(format!("{} has no sample {sample}", path.display())))?;
    if file_coords.dim() != coords.dim() {
        return Err(Error::CoordsMismatch(format!(
            "file has {:?} coordinates, graph has {:?}",
            file_coords.dim(),
            coords.dim()
        )));
    }
    let worst = (&file_coords - coords).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if !(worst <= COORDS_TOLERANCE) {
        return Err(Error::CoordsMismatch(format!("max coordinate deviation {worst:e}")));
    }
    if c.contains(&key(sample, "reference")) {
        return Ok(ExternalReference::Field(c.mat(&key(sample, "reference"))?));
    }
    if let Some(states) = read_trajectory(&c, sample)? {
        let times = c.f64s(&key(sample, "times"))?.1.to_vec();
        if times.len() != states.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::SchemaMismatch(
                "trajectory times must be strictly increasing, one per state".into(),
            ));
        }
        return Ok(ExternalReference::Trajectory(times, states));
    }
    Err(Error::SchemaMismatch(format!("sample {sample} has no reference field")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{ProblemConfig, ProblemName};

    fn small(name: ProblemName) -> Problem {
        let cfg = ProblemConfig {
            resolution: Some(12),
            spacing: Some(0.2),
            train_steps: Some(3),
            eval_steps: Some(4),
            window: Some(2),
            transient: Some(1.0),
            ..Default::default()
        };
        Problem::from_config(name, &cfg).unwrap()
    }

    #[test]
    fn round_trip_every_problem() {
        for name in [
            ProblemName::Poisson,
            ProblemName::DarcyPentagon,
            ProblemName::Ks,
            ProblemName::AllenCahn,
        ] {
            let p = small(name);
            let d = Dataset::generate(&p, &[3, 11]).unwrap();
            let back =
                Dataset::from_container(&Container::from_bytes(&d.to_container("train").to_bytes()).unwrap()).unwrap();
            assert_eq!(back, d, "{name}");
        }
    }

    #[test]
    fn files_are_byte_identical_and_splits_disjoint() {
        let dir = tempfile::tempdir().unwrap();
        let p = small(ProblemName::Burgers);
        let a = generate_dataset(&p, 3, 2, 42, &dir.path().join("a")).unwrap();
        let b = generate_dataset(&p, 3, 2, 42, &dir.path().join("b")).unwrap();
        assert_eq!(std::fs::read(&a.train).unwrap(), std::fs::read(&b.train).unwrap());
        assert_eq!(
            std::fs::read(a.test.as_ref().unwrap()).unwrap(),
            std::fs::read(b.test.as_ref().unwrap()).unwrap()
        );
        let none = generate_dataset(&p, 2, 0, 1, &dir.path().join("c")).unwrap();
        assert!(none.test.is_none());
        assert!(!dir.path().join("c/burgers_test.pgno").exists());
        let (tr, te) = split_seeds(9, 50, 50);
        assert!(te.iter().all(|s| !tr.contains(s)));
    }

    #[test]
    fn external_reference_checks() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.pgno");
        let p = small(ProblemName::Poisson);
        let d = Dataset::generate(&p, &[5]).unwrap();
        d.write(&path, "test").unwrap();
        let coords = d.instances[0].cloud.coords.clone();
        match load_external_reference(&path, 0, &coords).unwrap() {
            ExternalReference::Field(m) => assert_eq!(&m, d.instances[0].reference.as_ref().unwrap()),
            other => panic!("{other:?}"),
        }
        let fewer = coords.slice(ndarray::s![..coords.nrows() - 1, ..]).to_owned();
        assert!(matches!(
            load_external_reference(&path, 0, &fewer),
            Err(Error::CoordsMismatch(_))
        ));
        let mut moved = coords.clone();
        moved[[3, 0]] += 1e-6;
        assert!(matches!(
            load_external_reference(&path, 0, &moved),
            Err(Error::CoordsMismatch(_))
        ));
        let mut no_ref = d.clone();
        no_ref.instances[0].reference = None;
        no_ref.write(&path, "test").unwrap();
        assert!(matches!(
            load_external_reference(&path, 0, &coords),
            Err(Error::SchemaMismatch(_))
        ));

        let ks = small(ProblemName::Ks);
        let d = Dataset::generate(&ks, &[1]).unwrap();
        d.write(&path, "test").unwrap();
        let tr = load_external_reference(&path, 0, &d.instances[0].cloud.coords)
            .unwrap()
            .into_trajectory()
            .unwrap();
        assert_eq!(&tr.states, d.instances[0].trajectory.as_ref().unwrap());
        assert_eq!(tr.times[0], 1.0);
    }

    #[test]
    fn pentagon_geometries_are_distinct() {
        let p = small(ProblemName::DarcyPentagon);
        let seeds: Vec<u64> = (0..100).collect();
        let mut rng_geoms = Vec::new();
        for &s in &seeds {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            rng_geoms.push(crate::problems::sample_pentagon_vertices(&p.base_pentagon(), &mut rng));
        }
        for i in 0..rng_geoms.len() {
            for j in i + 1..rng_geoms.len() {
                let d = rng_geoms[i]
                    .iter()
                    .zip(&rng_geoms[j])
                    .map(|(a, b)| (a[0] - b[0]).abs().max((a[1] - b[1]).abs()))
                    .fold(0.0f64, f64::max);
                assert!(d > 0.0);
            }
        }
    }
}
