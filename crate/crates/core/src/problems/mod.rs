//! Benchmark problems: domains, residuals, boundary data and input samplers.
//!
//! A [`Problem`] is a fully resolved parameter set; [`Problem::sample`] turns
//! a seed into an [`Instance`] (point cloud, inputs, boundary values,
//! geometry parameters and, where available, a reference solution).

pub mod domains;
mod residuals;
pub mod samplers;

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::Mat;
use crate::error::{Error, Result};
use crate::geometry::{interpolate_at, BoundaryData, GeometryStrategy};
use crate::graph::PointCloud;
use crate::loss::{Dirichlet, ResidualSpec, BETA_DIRICHLET, BETA_PERIODIC};
use crate::solvers::{AllenCahnSolver, BurgersSolver, KsSolver};

pub use residuals::{AllenCahnRhs, BurgersRhs, DarcyResidual, KsRhs, PlateResidual, PoissonResidual};

use domains::{periodic_line, periodic_square, plate_domain, polygon_domain, square_grid, star_domain, Hole};
use samplers::{fourier_ic, gp_se_closed, gp_se_line, Matern};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProblemName {
    Poisson,
    DarcyStar,
    Plate,
    DarcyPentagon,
    PlateVariable,
    Burgers,
    Ks,
    AllenCahn,
}

impl ProblemName {
    pub const ALL: [ProblemName; 8] = [
        Self::Poisson,
        Self::DarcyStar,
        Self::Plate,
        Self::DarcyPentagon,
        Self::PlateVariable,
        Self::Burgers,
        Self::Ks,
        Self::AllenCahn,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Poisson => "poisson",
            Self::DarcyStar => "darcy_star",
            Self::Plate => "plate",
            Self::DarcyPentagon => "darcy_pentagon",
            Self::PlateVariable => "plate_variable",
            Self::Burgers => "burgers",
            Self::Ks => "ks",
            Self::AllenCahn => "allen_cahn",
        }
    }
}

impl fmt::Display for ProblemName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProblemName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown problem '{s}'")))
    }
}

/// Allen–Cahn rollout start.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AcMode {
    /// Roll out from `u₀` alone.
    IcOnly,
    /// The first `window` states come from the reference solver.
    FirstKGiven,
}

/// Problem parameters as written in a config file; unset fields take the
/// problem's defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    /// Grid side (Poisson, Allen–Cahn) or node count (Burgers, KS).
    pub resolution: Option<usize>,
    /// Target node spacing on unstructured domains.
    pub spacing: Option<f64>,
    pub gp_length: Option<f64>,
    /// Viscosity (Burgers), hyper-viscosity (KS) or interface width ε
    /// (Allen–Cahn).
    pub coefficient: Option<f64>,
    pub source: Option<f64>,
    pub youngs_modulus: Option<f64>,
    pub poisson_ratio: Option<f64>,
    pub dt: Option<f64>,
    pub train_steps: Option<usize>,
    pub eval_steps: Option<usize>,
    pub window: Option<usize>,
    pub fourier_terms: Option<usize>,
    pub transient: Option<f64>,
    /// Seed of the shared geometry (fixed domains, base pentagon).
    pub geometry_seed: Option<u64>,
    pub ac_mode: Option<AcMode>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeConfig {
    pub dt: f64,
    pub train_steps: usize,
    pub eval_steps: usize,
    /// Number of past states fed to the model.
    pub window: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub name: ProblemName,
    pub resolution: usize,
    pub spacing: f64,
    pub gp_length: f64,
    pub coefficient: f64,
    pub source: f64,
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub fourier_terms: usize,
    pub transient: f64,
    pub geometry_seed: u64,
    pub ac_mode: AcMode,
    pub time: Option<TimeConfig>,
}

/// Fixed-plate hole: ∅5 mm at the centre.
pub const PLATE_HOLE: Hole = [0.0, 0.0, 2.5];
/// Base hole centres and radius of the variable plate.
pub const PLATE_BASE_CENTERS: [[f64; 2]; 4] = [[-5.0, 5.0], [5.0, 5.0], [5.0, -5.0], [-5.0, -5.0]];
pub const PLATE_BASE_RADIUS: f64 = 1.5;
pub const PLATE_RADIUS_RANGE: (f64, f64) = (0.8, 1.5);
pub const PENTAGON_PERTURBATION: f64 = 0.25;

impl Problem {
    pub fn new(name: ProblemName) -> Self {
        Self::from_config(name, &ProblemConfig::default()).expect("defaults are valid")
    }

    pub fn from_config(name: ProblemName, c: &ProblemConfig) -> Result<Self> {
        use ProblemName::*;
        let resolution = c.resolution.unwrap_or(match name {
            Poisson | AllenCahn => 64,
            Burgers => 128,
            Ks => 96,
            _ => 0,
        });
        let spacing = c.spacing.unwrap_or(match name {
            DarcyStar => 0.04,
            DarcyPentagon => 0.035,
            Plate | PlateVariable => 0.44,
            _ => 0.0,
        });
        let gp_length = c.gp_length.unwrap_or(match name {
            Plate | PlateVariable => 5.0,
            _ => 0.2,
        });
        let coefficient = c.coefficient.unwrap_or(match name {
            Burgers => 0.0025,
            Ks => 1.0,
            AllenCahn => 0.01,
            _ => 0.0,
        });
        let time = match name {
            Burgers => Some(TimeConfig {
                dt: 0.005,
                train_steps: 200,
                eval_steps: 400,
                window: 10,
            }),
            Ks => Some(TimeConfig {
                dt: 0.1,
                train_steps: 200,
                eval_steps: 400,
                window: 10,
            }),
            AllenCahn => Some(TimeConfig {
                dt: 0.1,
                train_steps: 10,
                eval_steps: 10,
                window: 10,
            }),
            _ => None,
        }
        .map(|t| TimeConfig {
            dt: c.dt.unwrap_or(t.dt),
            train_steps: c.train_steps.unwrap_or(t.train_steps),
            eval_steps: c.eval_steps.unwrap_or(t.eval_steps),
            window: c.window.unwrap_or(t.window),
        });
        let p = Self {
            name,
            resolution,
            spacing,
            gp_length,
            coefficient,
            source: c.source.unwrap_or(10.0),
            youngs_modulus: c.youngs_modulus.unwrap_or(1.0),
            poisson_ratio: c.poisson_ratio.unwrap_or(0.3),
            fourier_terms: c.fourier_terms.unwrap_or(1),
            transient: c.transient.unwrap_or(if name == Ks { 100.0 } else { 0.0 }),
            geometry_seed: c.geometry_seed.unwrap_or(0),
            ac_mode: c.ac_mode.unwrap_or(AcMode::IcOnly),
            time,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        use ProblemName::*;
        let bad = |m: &str| Err(Error::Config(format!("{}: {m}", self.name)));
        match self.name {
            Poisson | AllenCahn if self.resolution < 4 => return bad("resolution must be at least 4"),
            Burgers | Ks if self.resolution < 8 => return bad("resolution must be at least 8"),
            DarcyStar | DarcyPentagon | Plate | PlateVariable if !(self.spacing > 0.0) => {
                return bad("spacing must be positive")
            }
            _ => {}
        }
        if !(self.gp_length > 0.0) {
            return bad("gp_length must be positive");
        }
        if !(self.poisson_ratio > -1.0 && self.poisson_ratio < 0.5) || !(self.youngs_modulus > 0.0) {
            return bad("material constants need E > 0 and −1 < μ < 0.5");
        }
        if let Some(t) = &self.time {
            if !(t.dt > 0.0) || t.window == 0 || t.train_steps == 0 {
                return bad("dt, window and train_steps must be positive");
            }
            if !(self.coefficient > 0.0) {
                return bad("coefficient must be positive");
            }
        }
        if self.transient < 0.0 {
            return bad("transient must be non-negative");
        }
        Ok(())
    }

    pub fn is_time_dependent(&self) -> bool {
        self.time.is_some()
    }

    pub fn out_channels(&self) -> usize {
        match self.name {
            ProblemName::Plate | ProblemName::PlateVariable => 2,
            _ => 1,
        }
    }

    fn plate_holes(&self) -> usize {
        match self.name {
            ProblemName::Plate => 1,
            ProblemName::PlateVariable => 4,
            _ => 0,
        }
    }

    /// Number of Dirichlet segments (0 for periodic problems).
    pub fn n_segments(&self) -> usize {
        match self.name {
            ProblemName::Poisson => 4,
            ProblemName::DarcyStar => 2,
            ProblemName::DarcyPentagon => 5,
            ProblemName::Plate | ProblemName::PlateVariable => 2 + self.plate_holes(),
            _ => 0,
        }
    }

    pub fn variable_geometry(&self) -> bool {
        matches!(self.name, ProblemName::DarcyPentagon | ProblemName::PlateVariable)
    }

    /// Whether [`Problem::sample`] attaches a ground truth.
    pub fn has_reference(&self) -> bool {
        matches!(
            self.name,
            ProblemName::Poisson | ProblemName::Burgers | ProblemName::Ks | ProblemName::AllenCahn
        )
    }

    pub fn default_beta(&self) -> f64 {
        if self.is_time_dependent() {
            BETA_PERIODIC
        } else {
            BETA_DIRICHLET
        }
    }

    pub fn residual(&self) -> Arc<dyn ResidualSpec> {
        use ProblemName::*;
        match self.name {
            Poisson => Arc::new(PoissonResidual),
            DarcyStar | DarcyPentagon => Arc::new(DarcyResidual {
                permeability: 1.0,
                source: self.source,
            }),
            Plate | PlateVariable => Arc::new(PlateResidual {
                youngs_modulus: self.youngs_modulus,
                poisson_ratio: self.poisson_ratio,
                traction_from: 2 + self.plate_holes() as i64,
            }),
            Burgers => Arc::new(BurgersRhs { nu: self.coefficient }),
            Ks => Arc::new(KsRhs { nu: self.coefficient }),
            AllenCahn => Arc::new(AllenCahnRhs { eps: self.coefficient }),
        }
    }

    /// Node-input width the operator sees under `strategy` (boundary value
    /// width for the encoder strategies).
    pub fn in_channels(&self, strategy: GeometryStrategy) -> Result<usize> {
        self.check_strategy(strategy)?;
        Ok(match (self.name, strategy) {
            (ProblemName::Poisson, _) => 1,
            (_, _) if self.is_time_dependent() => self.time.expect("time config").window,
            (_, GeometryStrategy::Interpolate) => self.out_channels() * self.n_segments(),
            _ => self.out_channels(),
        })
    }

    pub fn check_strategy(&self, strategy: GeometryStrategy) -> Result<()> {
        let ok = match strategy {
            GeometryStrategy::None => true,
            GeometryStrategy::Interpolate | GeometryStrategy::Encoder => {
                !self.is_time_dependent() && self.name != ProblemName::Poisson
            }
            GeometryStrategy::EncoderGeo => self.variable_geometry(),
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "geometry strategy {strategy:?} does not apply to {}",
                self.name
            )))
        }
    }

    /// Draw instance `seed`.
    pub fn sample(&self, seed: u64) -> Result<Instance> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match self.name {
            ProblemName::Poisson => Ok(self.sample_poisson(seed, &mut rng)),
            ProblemName::DarcyStar => self.sample_star(seed, &mut rng),
            ProblemName::DarcyPentagon => self.sample_pentagon(seed, &mut rng),
            ProblemName::Plate => self.sample_plate(seed, &[PLATE_HOLE], Vec::new(), &mut rng),
            ProblemName::PlateVariable => {
                let holes = sample_plate_holes(&mut rng);
                let mu = holes.iter().flatten().copied().collect();
                self.sample_plate(seed, &holes, mu, &mut rng)
            }
            ProblemName::Burgers => self.sample_burgers(seed, &mut rng),
            ProblemName::Ks => self.sample_ks(seed, &mut rng),
            ProblemName::AllenCahn => self.sample_allen_cahn(seed, &mut rng),
        }
    }

    fn sample_poisson(&self, seed: u64, rng: &mut ChaCha8Rng) -> Instance {
        let alpha: f64 = rng.gen_range(-2.0..2.0);
        let beta: f64 = rng.gen_range(-2.0..2.0);
        let cloud = square_grid(self.resolution, -1.0, 1.0);
        let n = cloud.len();
        let xy = |i: usize| (cloud.coords[[i, 0]], cloud.coords[[i, 1]]);
        let f = Array2::from_shape_fn((n, 1), |(i, _)| {
            let (x, y) = xy(i);
            poisson_source(alpha, beta, x, y)
        });
        let u = Array2::from_shape_fn((n, 1), |(i, _)| {
            let (x, y) = xy(i);
            poisson_solution(alpha, beta, x, y)
        });
        let boundary = boundary_from_cloud(&cloud, &Array2::zeros((n, 1)), |s| s >= 0);
        Instance {
            seed,
            cloud,
            input: Some(f),
            boundary: Some(boundary),
            geometry: vec![alpha, beta],
            reference: Some(u),
            trajectory: None,
            history: Vec::new(),
        }
    }

    fn sample_star(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let mut grng = ChaCha8Rng::seed_from_u64(self.geometry_seed);
        let dom = star_domain(self.spacing, &mut grng);
        let outer: Vec<usize> = (0..dom.cloud.len()).filter(|&i| dom.cloud.segment_id[i] == 1).collect();
        let xi: Vec<f64> = outer.iter().map(|&i| dom.xi[i]).collect();
        let g = gp_se_closed(&xi, self.gp_length, 0.0, rng)?;
        let mut values = Array2::zeros((dom.cloud.len(), 1));
        for (&i, v) in outer.iter().zip(g) {
            values[[i, 0]] = v;
        }
        let boundary = boundary_from_cloud(&dom.cloud, &values, |s| s >= 0);
        Ok(Instance::stationary(seed, dom.cloud, boundary, Vec::new()))
    }

    /// Base pentagon: five angles on the unit circle, sorted, redrawn until
    /// adjacent vertices are at least `2π/10` apart so perturbation disks
    /// cannot swap vertex order.
    pub fn base_pentagon(&self) -> [[f64; 2]; 5] {
        let mut rng = ChaCha8Rng::seed_from_u64(self.geometry_seed);
        loop {
            let mut th: Vec<f64> = (0..5).map(|_| rng.gen_range(0.0..2.0 * PI)).collect();
            th.sort_by(f64::total_cmp);
            let min_gap = (0..5)
                .map(|i| {
                    if i == 4 {
                        th[0] + 2.0 * PI - th[4]
                    } else {
                        th[i + 1] - th[i]
                    }
                })
                .fold(f64::INFINITY, f64::min);
            if min_gap >= 2.0 * PI / 10.0 {
                return std::array::from_fn(|i| [th[i].cos(), th[i].sin()]);
            }
        }
    }

    fn sample_pentagon(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let base = self.base_pentagon();
        let verts = sample_pentagon_vertices(&base, rng);
        let dom = polygon_domain(&verts, self.spacing, rng);
        let bnodes: Vec<usize> = (0..dom.cloud.len()).filter(|&i| dom.cloud.boundary_mask[i]).collect();
        let xi: Vec<f64> = bnodes.iter().map(|&i| dom.xi[i]).collect();
        let g = gp_se_closed(&xi, self.gp_length, 0.0, rng)?;
        let mut values = Array2::zeros((dom.cloud.len(), 1));
        for (&i, v) in bnodes.iter().zip(g) {
            values[[i, 0]] = v;
        }
        let boundary = boundary_from_cloud(&dom.cloud, &values, |s| s >= 0);
        let mu = verts.iter().flatten().copied().collect();
        Ok(Instance::stationary(seed, dom.cloud, boundary, mu))
    }

    fn sample_plate(&self, seed: u64, holes: &[Hole], mu: Vec<f64>, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let dom = if self.variable_geometry() {
            plate_domain(holes, self.spacing, rng)
        } else {
            plate_domain(holes, self.spacing, &mut ChaCha8Rng::seed_from_u64(self.geometry_seed))
        };
        let cloud = dom.cloud;
        let mut values = Array2::zeros((cloud.len(), 2));
        for side in [0, 1] {
            let nodes: Vec<usize> = (0..cloud.len()).filter(|&i| cloud.segment_id[i] == side).collect();
            let y: Vec<f64> = nodes.iter().map(|&i| cloud.coords[[i, 1]]).collect();
            for c in 0..2 {
                let g = gp_se_line(&y, self.gp_length, 1.0, rng)?;
                for (&i, v) in nodes.iter().zip(g) {
                    values[[i, c]] = v;
                }
            }
        }
        let n_dirichlet = 2 + holes.len() as i64;
        let boundary = boundary_from_cloud(&cloud, &values, |s| s >= 0 && s < n_dirichlet);
        Ok(Instance::stationary(seed, cloud, boundary, mu))
    }

    fn time(&self) -> TimeConfig {
        self.time.expect("time-dependent problem")
    }

    fn sample_burgers(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let t = self.time();
        let cloud = periodic_line(self.resolution, 1.0);
        let x: Vec<f64> = cloud.coords.column(0).to_vec();
        let u0 = fourier_ic(&x, self.fourier_terms, rng);
        let steps = t.eval_steps.max(t.train_steps);
        let tr = BurgersSolver::default().solve(&u0, self.coefficient, t.dt, steps)?;
        Ok(Instance::rollout(seed, cloud, tr.states, 1))
    }

    fn sample_ks(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let t = self.time();
        let length = 22.0 * PI;
        let cloud = periodic_line(self.resolution, length);
        let coef: Vec<(f64, f64)> = (0..self.fourier_terms.max(4))
            .map(|_| {
                (
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
            })
            .collect();
        let u0: Vec<f64> = cloud
            .coords
            .column(0)
            .iter()
            .map(|&x| {
                coef.iter()
                    .enumerate()
                    .map(|(m, (a, b))| {
                        let arg = 2.0 * PI * (m + 1) as f64 * x / length;
                        a * arg.cos() + b * arg.sin()
                    })
                    .sum()
            })
            .collect();
        let steps = t.eval_steps.max(t.train_steps);
        let tr = KsSolver::default().solve(&u0, self.coefficient, t.dt, steps, self.transient)?;
        Ok(Instance::rollout(seed, cloud, tr.states, 1))
    }

    fn sample_allen_cahn(&self, seed: u64, rng: &mut ChaCha8Rng) -> Result<Instance> {
        let t = self.time();
        let n = self.resolution;
        let cloud = periodic_square(n);
        let u0 = Matern::default().sample_grid(n, rng);
        let given = match self.ac_mode {
            AcMode::IcOnly => 1,
            AcMode::FirstKGiven => t.window,
        };
        let steps = t.eval_steps.max(t.train_steps) + given - 1;
        let tr = AllenCahnSolver::default().solve(&u0, self.coefficient, t.dt, steps)?;
        Ok(Instance::rollout(seed, cloud, tr.states, given))
    }
}

/// Five vertices, vertex `i` uniform in the disk of radius 0.25 around base
/// vertex `i`, then ordered by angle about their centroid.
pub fn sample_pentagon_vertices(base: &[[f64; 2]; 5], rng: &mut ChaCha8Rng) -> Vec<[f64; 2]> {
    let mut v: Vec<[f64; 2]> = base
        .iter()
        .map(|b| {
            let r = PENTAGON_PERTURBATION * rng.gen::<f64>().sqrt();
            let phi = rng.gen_range(0.0..2.0 * PI);
            [b[0] + r * phi.cos(), b[1] + r * phi.sin()]
        })
        .collect();
    let c = [0, 1].map(|d| v.iter().map(|p| p[d]).sum::<f64>() / 5.0);
    v.sort_by(|a, b| {
        (a[1] - c[1])
            .atan2(a[0] - c[0])
            .total_cmp(&(b[1] - c[1]).atan2(b[0] - c[0]))
    });
    v
}

/// Four holes: centres on the circles of radius 1.5 around `(±5, ±5)`,
/// radii uniform in `[0.8, 1.5]`.
pub fn sample_plate_holes(rng: &mut ChaCha8Rng) -> Vec<Hole> {
    PLATE_BASE_CENTERS
        .iter()
        .map(|c| {
            let phi = rng.gen_range(0.0..2.0 * PI);
            let r = rng.gen_range(PLATE_RADIUS_RANGE.0..=PLATE_RADIUS_RANGE.1);
            [
                c[0] + PLATE_BASE_RADIUS * phi.cos(),
                c[1] + PLATE_BASE_RADIUS * phi.sin(),
                r,
            ]
        })
        .collect()
}

/// `α sin(πx)(1 + cos πy) + β sin(2πx)(1 − cos 2πy)`.
pub fn poisson_solution(alpha: f64, beta: f64, x: f64, y: f64) -> f64 {
    alpha * (PI * x).sin() * (1.0 + (PI * y).cos()) + beta * (2.0 * PI * x).sin() * (1.0 - (2.0 * PI * y).cos())
}

/// Laplacian of [`poisson_solution`].
pub fn poisson_source(alpha: f64, beta: f64, x: f64, y: f64) -> f64 {
    let pi2 = PI * PI;
    -alpha * pi2 * (PI * x).sin() * (1.0 + 2.0 * (PI * y).cos())
        + 4.0 * beta * pi2 * (2.0 * PI * x).sin() * (2.0 * (2.0 * PI * y).cos() - 1.0)
}

fn boundary_from_cloud(cloud: &PointCloud, values: &Mat, keep: impl Fn(i64) -> bool) -> BoundaryData {
    let idx: Vec<usize> = (0..cloud.len()).filter(|&i| keep(cloud.segment_id[i])).collect();
    BoundaryData {
        bc_coords: cloud.coords.select(Axis(0), &idx),
        bc_values: values.select(Axis(0), &idx),
        segment_id: idx.iter().map(|&i| cloud.segment_id[i]).collect(),
        node_idx: Some(idx),
    }
}

/// One problem instance.
#[derive(Clone, Debug, PartialEq)]
pub struct Instance {
    pub seed: u64,
    pub cloud: PointCloud,
    /// Node input field (the Poisson source).
    pub input: Option<Mat>,
    /// Dirichlet data with `node_idx` set.
    pub boundary: Option<BoundaryData>,
    /// Geometry parameters `μ` (pentagon vertices, plate holes; Poisson
    /// stores `[α, β]`).
    pub geometry: Vec<f64>,
    /// Stationary ground truth.
    pub reference: Option<Mat>,
    /// Reference states, starting with the given history.
    pub trajectory: Option<Vec<Mat>>,
    /// States the rollout starts from.
    pub history: Vec<Mat>,
}

/// What the operator is fed for one instance.
#[derive(Clone, Debug, PartialEq)]
pub enum PreparedInput {
    Nodes(Mat),
    Boundary { values: Mat, coords: Mat },
}

impl Instance {
    fn stationary(seed: u64, cloud: PointCloud, boundary: BoundaryData, geometry: Vec<f64>) -> Self {
        Self {
            seed,
            cloud,
            input: None,
            boundary: Some(boundary),
            geometry,
            reference: None,
            trajectory: None,
            history: Vec::new(),
        }
    }

    fn rollout(seed: u64, cloud: PointCloud, states: Vec<Mat>, given: usize) -> Self {
        Self {
            seed,
            cloud,
            input: None,
            boundary: None,
            geometry: Vec::new(),
            reference: None,
            history: states[..given].to_vec(),
            trajectory: Some(states),
        }
    }

    pub fn len(&self) -> usize {
        self.cloud.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cloud.is_empty()
    }

    pub fn dirichlet(&self) -> Option<Dirichlet> {
        self.boundary.as_ref().map(|b| Dirichlet {
            nodes: Arc::new(b.node_idx.clone().expect("instance boundary data carries node indices")),
            values: b.bc_values.clone(),
        })
    }

    /// Nodes where the PDE is enforced: interior nodes, or all nodes on a
    /// periodic domain.
    pub fn pde_nodes(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.cloud.boundary_mask[i]).collect()
    }

    /// Boundary values written into an `N × c` field, zero off the boundary.
    pub fn boundary_field(&self) -> Option<Mat> {
        let b = self.boundary.as_ref()?;
        let mut f = Array2::zeros((self.len(), b.channels()));
        for (r, &i) in b.node_idx.as_ref().expect("node indices").iter().enumerate() {
            f.row_mut(i).assign(&b.bc_values.row(r));
        }
        Some(f)
    }

    /// Operator input under `strategy`. Time-dependent instances have none:
    /// their inputs are rollout windows.
    pub fn model_input(&self, problem: &Problem, strategy: GeometryStrategy) -> Result<Option<PreparedInput>> {
        problem.check_strategy(strategy)?;
        if problem.is_time_dependent() {
            return Ok(None);
        }
        if let Some(f) = &self.input {
            return Ok(Some(PreparedInput::Nodes(f.clone())));
        }
        let b = self
            .boundary
            .as_ref()
            .ok_or_else(|| Error::SchemaMismatch("instance has neither inputs nor boundary data".into()))?;
        Ok(Some(match strategy {
            GeometryStrategy::None => PreparedInput::Nodes(self.boundary_field().expect("boundary present")),
            GeometryStrategy::Interpolate => PreparedInput::Nodes(interpolate_at(
                self.cloud.coords.view(),
                self.cloud.period.as_deref(),
                b,
                problem.n_segments(),
            )?),
            GeometryStrategy::Encoder | GeometryStrategy::EncoderGeo => PreparedInput::Boundary {
                values: b.bc_values.clone(),
                coords: b.bc_coords.clone(),
            },
        }))
    }
}
