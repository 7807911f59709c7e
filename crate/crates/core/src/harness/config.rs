//! Run configuration: one TOML file plus `key=value` overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::Activation;
use crate::error::{Error, Result};
use crate::geometry::GeometryStrategy;
use crate::operator::{LiftKind, OperatorConfig};
use crate::optim::StepDecay;
use crate::problems::{Problem, ProblemConfig, ProblemName};
use crate::stencil::StencilParams;

/// Environment variable that relative output directories are resolved
/// against.
pub const OUTPUT_ROOT_ENV: &str = "PHYSGNO_OUTPUT_ROOT";

/// The user-facing subset of [`OperatorConfig`]; channel counts and the
/// lift follow from the problem and geometry strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OperatorSettings {
    pub hidden_channels: usize,
    pub num_blocks: usize,
    /// Upper bound on Laplacian modes; capped by the smallest graph.
    pub modes: usize,
    pub gating_hidden: usize,
    pub edge_feature_dim: usize,
    pub embedding_dim: usize,
    pub encoder_hidden: usize,
    pub activation: Activation,
}

impl Default for OperatorSettings {
    fn default() -> Self {
        let d = OperatorConfig::default();
        Self {
            hidden_channels: d.hidden_channels,
            num_blocks: d.num_blocks,
            modes: d.modes,
            gating_hidden: d.gating_hidden,
            edge_feature_dim: d.edge_feature_dim,
            embedding_dim: d.embedding_dim,
            encoder_hidden: d.encoder_hidden,
            activation: d.activation,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub problem: ProblemName,
    pub problem_params: ProblemConfig,
    pub geometry: GeometryStrategy,
    pub operator: OperatorSettings,
    pub optimizer: StepDecay,
    /// Default 500 for stationary problems, 300 for time-dependent ones.
    pub epochs: Option<usize>,
    /// Default 16 samples (stationary) or 4 trajectories.
    pub batch_size: Option<usize>,
    pub seed: u64,
    /// Boundary weight; problem default when unset.
    pub beta: Option<f64>,
    pub stencil: StencilParams,
    /// k-NN neighbours; 2 in 1-D and 6 in 2-D when unset.
    pub graph_k: Option<usize>,
    pub n_train: usize,
    pub n_test: usize,
    /// Read instances from dataset files instead of sampling them.
    pub train_data: Option<PathBuf>,
    pub test_data: Option<PathBuf>,
    /// Backpropagate through the whole rollout; `false` truncates gradients
    /// to one step.
    pub full_backprop: bool,
    pub checkpoint_every: usize,
    /// Evaluate on the test split every this many epochs (and at the end).
    pub eval_every: usize,
    pub output_dir: PathBuf,
    /// Continue from this checkpoint.
    pub resume: Option<PathBuf>,
    /// Directory for cached graphs and stencils.
    pub graph_cache: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            problem: ProblemName::Poisson,
            problem_params: ProblemConfig::default(),
            geometry: GeometryStrategy::None,
            operator: OperatorSettings::default(),
            optimizer: StepDecay::default(),
            epochs: None,
            batch_size: None,
            seed: 0,
            beta: None,
            stencil: StencilParams::default(),
            graph_k: None,
            n_train: 400,
            n_test: 100,
            train_data: None,
            test_data: None,
            full_backprop: true,
            checkpoint_every: 50,
            eval_every: 10,
            output_dir: PathBuf::from("runs"),
            resume: None,
            graph_cache: None,
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Error {
    Error::Config(e.to_string())
}

/// Parse an override value as a TOML value, falling back to a string.
fn parse_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Apply `a.b.c=value` overrides to a TOML table.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for ov in overrides {
        let (path, raw) = ov
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override '{ov}' is not key=value")))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::Config(format!("override '{ov}' has an empty key")));
        }
        let mut cur = &mut *table;
        for k in &keys[..keys.len() - 1] {
            let entry = cur
                .entry(k.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Error::Config(format!("override '{ov}': '{k}' is not a table")))?;
        }
        cur.insert(keys[keys.len() - 1].to_string(), parse_value(raw.trim()));
    }
    Ok(())
}

impl TrainConfig {
    pub fn from_toml_str(text: &str, overrides: &[String]) -> Result<Self> {
        let mut table: toml::Table = toml::from_str(text).map_err(config_err)?;
        apply_overrides(&mut table, overrides)?;
        let cfg: Self = toml::Value::Table(table).try_into().map_err(config_err)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text, overrides)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn resolved_problem(&self) -> Result<Problem> {
        Problem::from_config(self.problem, &self.problem_params)
    }

    pub fn validate(&self) -> Result<()> {
        let problem = self.resolved_problem()?;
        problem.check_strategy(self.geometry)?;
        let positive = [
            ("operator.hidden_channels", self.operator.hidden_channels),
            ("operator.num_blocks", self.operator.num_blocks),
            ("operator.modes", self.operator.modes),
            ("operator.gating_hidden", self.operator.gating_hidden),
            ("operator.edge_feature_dim", self.operator.edge_feature_dim),
            ("operator.embedding_dim", self.operator.embedding_dim),
            ("operator.encoder_hidden", self.operator.encoder_hidden),
            ("checkpoint_every", self.checkpoint_every),
            ("eval_every", self.eval_every),
            ("optimizer.decay_every", self.optimizer.decay_every),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.epochs == Some(0) || self.batch_size == Some(0) || self.graph_k == Some(0) {
            return Err(Error::Config("epochs, batch_size and graph_k must be positive".into()));
        }
        if self.train_data.is_none() && self.n_train == 0 {
            return Err(Error::Config("n_train must be positive".into()));
        }
        if !(self.optimizer.lr0 > 0.0) || !(self.optimizer.decay_factor > 0.0) {
            return Err(Error::Config(
                "optimizer.lr0 and optimizer.decay_factor must be positive".into(),
            ));
        }
        if self.beta.is_some_and(|b| !(b >= 0.0)) {
            return Err(Error::Config("beta must be non-negative".into()));
        }
        Ok(())
    }

    pub fn epochs(&self, problem: &Problem) -> usize {
        self.epochs
            .unwrap_or(if problem.is_time_dependent() { 300 } else { 500 })
    }

    pub fn batch_size(&self, problem: &Problem) -> usize {
        self.batch_size
            .unwrap_or(if problem.is_time_dependent() { 4 } else { 16 })
    }

    pub fn beta(&self, problem: &Problem) -> f64 {
        self.beta.unwrap_or_else(|| problem.default_beta())
    }

    /// `output_dir`, prefixed with `$PHYSGNO_OUTPUT_ROOT` when relative.
    pub fn resolved_output_dir(&self) -> PathBuf {
        resolve_output(&self.output_dir)
    }

    /// Full operator config for `problem` with `modes` Laplacian modes and
    /// `dim`-dimensional coordinates.
    pub fn operator_config(&self, problem: &Problem, modes: usize, dim: usize) -> Result<OperatorConfig> {
        let s = &self.operator;
        let lift = self.geometry.lift();
        let cfg = OperatorConfig {
            in_channels: problem.in_channels(self.geometry)?,
            hidden_channels: s.hidden_channels,
            out_channels: problem.out_channels(),
            num_blocks: s.num_blocks,
            modes,
            gating_hidden: s.gating_hidden,
            edge_feature_dim: s.edge_feature_dim,
            embedding_dim: s.embedding_dim,
            coord_dim: dim,
            activation: s.activation,
            lift,
            encoder_hidden: s.encoder_hidden,
            residual_output: problem.is_time_dependent() && lift == LiftKind::Linear,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Prefix a relative path with `$PHYSGNO_OUTPUT_ROOT` when it is set.
pub fn resolve_output(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if path.is_relative() && !root.is_empty() => PathBuf::from(root).join(path),
        _ => path.to_path_buf(),
    }
}
