//! The trainable spatio-spectral graph operator.
//!
//! ```text
//! v₀      = P(a, x)                      (lift, or a geometry encoder)
//! v_{t+1} = W_c [ spectral(v_t) ‖ spatial(v_t) ]
//! u       = Q(v_T)
//! spectral(v) = σ( S (K ×₁ Sᵀv) + w(v) )
//! spatial(v)_u = Σ_{s ∈ N(u)} γ_us (v W)_s
//! γ_us = sigmoid( W₃ ReLU( W₁ [h_s ‖ h_u ‖ W₂ ℓ_us] ) )
//! ```
//!
//! `S` holds the kept Laplacian eigenvectors, `h` the anchor-distance node
//! embeddings and `ℓ` the edge length in normalized coordinates.

mod checkpoint;
mod layers;

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mat, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::geometry::EncoderParams;
use crate::graph::SpatialGraph;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_KIND};
pub use layers::{Linear, Mlp};

/// How node inputs reach the first block.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LiftKind {
    /// Affine map of `[inputs ‖ coords]`.
    Linear,
    /// Coordinate and boundary-value encoders fused by a decoder.
    Encoder,
    /// `Encoder` modulated by a boundary-geometry encoding.
    EncoderGeo,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OperatorConfig {
    /// Node input channels for `Linear`, boundary value channels otherwise.
    pub in_channels: usize,
    pub hidden_channels: usize,
    pub out_channels: usize,
    pub num_blocks: usize,
    pub modes: usize,
    pub gating_hidden: usize,
    /// Width of the lifted scalar edge feature (`W₂`).
    pub edge_feature_dim: usize,
    /// Columns of the node embedding fed to the gates.
    pub embedding_dim: usize,
    pub coord_dim: usize,
    pub activation: Activation,
    pub lift: LiftKind,
    pub encoder_hidden: usize,
    /// Add the first `out_channels` input channels to the output, so the
    /// network predicts an increment.
    pub residual_output: bool,
    pub seed: u64,
}

impl Default for OperatorConfig {
    fn default() -> Self {
        Self {
            in_channels: 1,
            hidden_channels: 64,
            out_channels: 1,
            num_blocks: 4,
            modes: 64,
            gating_hidden: 64,
            edge_feature_dim: 8,
            embedding_dim: 16,
            coord_dim: 2,
            activation: Activation::Gelu,
            lift: LiftKind::Linear,
            encoder_hidden: 64,
            residual_output: false,
            seed: 0,
        }
    }
}

impl OperatorConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("in_channels", self.in_channels),
            ("hidden_channels", self.hidden_channels),
            ("out_channels", self.out_channels),
            ("num_blocks", self.num_blocks),
            ("modes", self.modes),
            ("gating_hidden", self.gating_hidden),
            ("edge_feature_dim", self.edge_feature_dim),
            ("embedding_dim", self.embedding_dim),
            ("coord_dim", self.coord_dim),
            ("encoder_hidden", self.encoder_hidden),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("operator.{name} must be positive")));
            }
        }
        if self.residual_output && self.in_channels < self.out_channels {
            return Err(Error::Config(
                "residual_output needs at least out_channels input channels".into(),
            ));
        }
        if self.residual_output && self.lift != LiftKind::Linear {
            return Err(Error::Config("residual_output requires the linear lift".into()));
        }
        Ok(())
    }
}

/// Affine input/output scalings stored alongside the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub in_mean: Array1<f64>,
    pub in_std: Array1<f64>,
    pub coord_mean: Array1<f64>,
    pub coord_std: Array1<f64>,
    pub out_mean: Array1<f64>,
    pub out_std: Array1<f64>,
}

impl Normalizer {
    pub fn identity(in_ch: usize, dim: usize, out_ch: usize) -> Self {
        Self {
            in_mean: Array1::zeros(in_ch),
            in_std: Array1::ones(in_ch),
            coord_mean: Array1::zeros(dim),
            coord_std: Array1::ones(dim),
            out_mean: Array1::zeros(out_ch),
            out_std: Array1::ones(out_ch),
        }
    }

    /// Per-column mean and std over the rows of all `samples` (std floored).
    pub fn column_stats<'s>(samples: impl IntoIterator<Item = &'s Array2<f64>>) -> (Array1<f64>, Array1<f64>) {
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        let mut count = 0usize;
        for s in samples {
            let s1 = s.sum_axis(Axis(0));
            let s2 = s.mapv(|v| v * v).sum_axis(Axis(0));
            sum = Some(match sum {
                Some(a) => a + s1,
                None => s1,
            });
            sq = Some(match sq {
                Some(a) => a + s2,
                None => s2,
            });
            count += s.nrows();
        }
        let (sum, sq) = match (sum, sq) {
            (Some(a), Some(b)) if count > 0 => (a, b),
            _ => return (Array1::zeros(0), Array1::ones(0)),
        };
        let mean = &sum / count as f64;
        let var = &sq / count as f64 - &mean * &mean;
        let scale = mean.iter().map(|m| m.abs()).fold(1e-12, f64::max);
        let std = var.mapv(|v| v.max(0.0).sqrt().max(1e-6 * scale));
        (mean, std)
    }

    /// Mean coordinate standard deviation; edge lengths are divided by it.
    pub fn length_scale(&self) -> f64 {
        self.coord_std.mean().unwrap_or(1.0).max(f64::MIN_POSITIVE)
    }
}

/// Parameters of the edge gate network.
#[derive(Clone, Debug)]
pub struct GateParams {
    pub w1_src: ParamId,
    pub w1_tgt: ParamId,
    pub w1_edge: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub w3: ParamId,
    pub b3: ParamId,
}

#[derive(Clone, Debug)]
pub struct BlockParams {
    /// `m × d²`, logical shape `[m, d, d]`.
    pub spectral_kernel: ParamId,
    pub bypass: Linear,
    pub spatial_weight: ParamId,
    pub gate: GateParams,
    pub mix: Linear,
}

#[derive(Clone, Debug)]
pub struct Operator {
    pub config: OperatorConfig,
    pub params: ParamStore,
    pub normalizer: Normalizer,
    pub lift: Option<Linear>,
    pub encoder: Option<EncoderParams>,
    pub blocks: Vec<BlockParams>,
    pub proj: Mlp,
}

/// Initial gate bias; gates start near-open.
pub const GATE_BIAS_INIT: f64 = 2.0;

impl Operator {
    pub fn new(config: OperatorConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let d = config.hidden_channels;
        let (lift, encoder) = match config.lift {
            LiftKind::Linear => (
                Some(Linear::new(
                    &mut store,
                    &mut rng,
                    "lift",
                    config.in_channels + config.coord_dim,
                    d,
                    true,
                )),
                None,
            ),
            kind => (
                None,
                Some(EncoderParams::new(
                    &mut store,
                    &mut rng,
                    &config,
                    kind == LiftKind::EncoderGeo,
                )),
            ),
        };
        let mut blocks = Vec::with_capacity(config.num_blocks);
        for t in 0..config.num_blocks {
            let p = format!("blocks.{t}");
            let m = config.modes;
            let scale = 1.0 / ((d * m) as f64).sqrt();
            let k = Array2::from_shape_fn((m, d * d), |_| scale * rng.gen_range(-1.0..1.0));
            let spectral_kernel = store.insert(format!("{p}.spectral_kernel"), vec![m, d, d], k);
            let bypass = Linear::new(&mut store, &mut rng, &format!("{p}.bypass"), d, d, true);
            let bound = 1.0 / (d as f64).sqrt();
            let w = Array2::from_shape_fn((d, d), |_| rng.gen_range(-bound..bound));
            let spatial_weight = store.insert(format!("{p}.spatial_weight"), vec![d, d], w);
            let gate = GateParams::new(&mut store, &mut rng, &p, &config);
            let mix = Linear::new(&mut store, &mut rng, &format!("{p}.mix"), 2 * d, d, true);
            blocks.push(BlockParams {
                spectral_kernel,
                bypass,
                spatial_weight,
                gate,
                mix,
            });
        }
        let proj = Mlp::new(
            &mut store,
            &mut rng,
            "proj",
            &[d, d, config.out_channels],
            config.activation,
        );
        let normalizer = Normalizer::identity(config.in_channels, config.coord_dim, config.out_channels);
        Ok(Self {
            config,
            params: store,
            normalizer,
            lift,
            encoder,
            blocks,
            proj,
        })
    }

    pub fn check_graph(&self, graph: &SpatialGraph) -> Result<()> {
        if graph.modes() != self.config.modes {
            return Err(Error::ModeMismatch {
                expected: self.config.modes,
                found: graph.modes(),
            });
        }
        if graph.lipschitz_emb.ncols() != self.config.embedding_dim {
            return Err(Error::ShapeMismatch(format!(
                "operator expects {}-dim node embeddings, graph has {}",
                self.config.embedding_dim,
                graph.lipschitz_emb.ncols()
            )));
        }
        if graph.dim() != self.config.coord_dim {
            return Err(Error::ShapeMismatch(format!(
                "operator expects {}-D coordinates, graph is {}-D",
                self.config.coord_dim,
                graph.dim()
            )));
        }
        Ok(())
    }

    /// `(x − mean) / std` row-wise on the tape.
    pub(crate) fn normalize(tape: &mut Tape, x: Var, mean: &Array1<f64>, std: &Array1<f64>) -> Var {
        let neg = tape.constant(mean.mapv(|m| -m).insert_axis(Axis(0)));
        let inv = tape.constant(std.mapv(|s| 1.0 / s).insert_axis(Axis(0)));
        let c = tape.add_row(x, neg);
        tape.mul_row(c, inv)
    }

    pub(crate) fn normalized_coords(&self, tape: &mut Tape, coords: &Mat) -> Var {
        let x = tape.constant(coords.clone());
        Self::normalize(tape, x, &self.normalizer.coord_mean, &self.normalizer.coord_std)
    }

    /// Affine lift of `[normalized inputs ‖ normalized coords]` to `d_v`.
    pub fn lift(&self, tape: &mut Tape, graph: &SpatialGraph, inputs: Var) -> Result<Var> {
        let lift = self
            .lift
            .as_ref()
            .ok_or_else(|| Error::Config("operator has no linear lift".into()))?;
        let (n, c) = tape.shape(inputs);
        if n != graph.len() || c != self.config.in_channels {
            return Err(Error::ShapeMismatch(format!(
                "inputs are {n} x {c}, expected {} x {}",
                graph.len(),
                self.config.in_channels
            )));
        }
        let a = Self::normalize(tape, inputs, &self.normalizer.in_mean, &self.normalizer.in_std);
        let x = self.normalized_coords(tape, graph.coords());
        let ax = tape.concat(&[a, x]);
        Ok(lift.forward(tape, ax))
    }

    /// `σ(S (K ×₁ Sᵀv) + w(v))`.
    pub fn spectral_branch<'a>(
        &self,
        tape: &mut Tape<'a>,
        graph: &'a SpatialGraph,
        v: Var,
        block: usize,
    ) -> Result<Var> {
        let pre = self.spectral_preactivation(tape, graph, v, block)?;
        Ok(tape.act(pre, self.config.activation))
    }

    pub fn spectral_preactivation<'a>(
        &self,
        tape: &mut Tape<'a>,
        graph: &'a SpatialGraph,
        v: Var,
        block: usize,
    ) -> Result<Var> {
        if graph.modes() != self.config.modes {
            return Err(Error::ModeMismatch {
                expected: self.config.modes,
                found: graph.modes(),
            });
        }
        let b = &self.blocks[block];
        let s = tape.constant_ref(&graph.eigvecs);
        let coef = tape.matmul_tn(s, v);
        let k = tape.param(b.spectral_kernel);
        let mixed = tape.mode_mul(coef, k);
        let back = tape.matmul(s, mixed);
        let bypass = b.bypass.forward(tape, v);
        Ok(tape.add(back, bypass))
    }

    /// Gate value per directed edge (`E × 1`, ordered as `graph.edges`).
    pub fn gate_values<'a>(&self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, block: usize) -> Var {
        let g = &self.blocks[block].gate;
        let ei = graph.edge_index();
        let h = tape.constant_ref(&graph.lipschitz_emb);
        let w1s = tape.param(g.w1_src);
        let w1t = tape.param(g.w1_tgt);
        let a_src = tape.matmul(h, w1s);
        let a_tgt = tape.matmul(h, w1t);
        let e_src = tape.gather_rows(a_src, ei.sources.clone());
        let e_tgt = tape.gather_rows(a_tgt, ei.targets.clone());
        let len = tape.constant(ei.lengths.mapv(|l| l / self.normalizer.length_scale()));
        let w2 = tape.param(g.w2);
        let w1e = tape.param(g.w1_edge);
        let lifted = tape.matmul(w2, w1e);
        let e_len = tape.matmul(len, lifted);
        let z = tape.add(e_src, e_tgt);
        let z = tape.add(z, e_len);
        let b1 = tape.param(g.b1);
        let z = tape.add_row(z, b1);
        let z = tape.act(z, Activation::Relu);
        let w3 = tape.param(g.w3);
        let b3 = tape.param(g.b3);
        let logit = tape.linear(z, w3, Some(b3));
        tape.act(logit, Activation::Sigmoid)
    }

    /// Gates through the literal concatenated form `W₁[h_s ‖ h_u ‖ W₂ℓ]`.
    /// Slower than [`Operator::gate_values`]; kept as a cross-check.
    pub fn gate_values_direct(&self, graph: &SpatialGraph, block: usize) -> Array2<f64> {
        let g = &self.blocks[block].gate;
        let p = &self.params;
        let ei = graph.edge_index();
        let n_emb = graph.lipschitz_emb.ncols();
        let w1 = ndarray::concatenate(
            Axis(0),
            &[p.get(g.w1_src).view(), p.get(g.w1_tgt).view(), p.get(g.w1_edge).view()],
        )
        .unwrap();
        let mut out = Array2::zeros((ei.sources.len(), 1));
        for e in 0..ei.sources.len() {
            let (s, t) = (ei.sources[e], ei.targets[e]);
            let l = ei.lengths[[e, 0]] / self.normalizer.length_scale();
            let lifted = p.get(g.w2).row(0).mapv(|w| w * l);
            let mut feat = Vec::with_capacity(w1.nrows());
            feat.extend(graph.lipschitz_emb.row(s).iter());
            feat.extend(graph.lipschitz_emb.row(t).iter());
            feat.extend(lifted.iter());
            debug_assert_eq!(feat.len(), 2 * n_emb + lifted.len());
            let feat = Array1::from(feat);
            let hidden = (feat.dot(&w1) + p.get(g.b1).row(0)).mapv(|x| x.max(0.0));
            let logit = hidden.dot(&p.get(g.w3).column(0)) + p.get(g.b3)[[0, 0]];
            out[[e, 0]] = crate::autodiff::sigmoid(logit);
        }
        out
    }

    /// `Σ_{s ∈ N(u)} γ_us (v W)_s`.
    pub fn spatial_branch<'a>(&self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, v: Var, block: usize) -> Var {
        let gamma = self.gate_values(tape, graph, block);
        self.spatial_with_gates(tape, graph, v, block, gamma)
    }

    fn spatial_with_gates(&self, tape: &mut Tape, graph: &SpatialGraph, v: Var, block: usize, gamma: Var) -> Var {
        let ei = graph.edge_index();
        let w = tape.param(self.blocks[block].spatial_weight);
        let vw = tape.matmul(v, w);
        let msg = tape.gather_rows(vw, ei.sources.clone());
        let msg = tape.mul_col(msg, gamma);
        tape.scatter_add_rows(msg, ei.targets.clone(), graph.len())
    }

    /// `W_c [spectral ‖ spatial]`.
    pub fn block<'a>(&self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, v: Var, block: usize) -> Result<Var> {
        let spec = self.spectral_branch(tape, graph, v, block)?;
        let spat = self.spatial_branch(tape, graph, v, block);
        let both = tape.concat(&[spec, spat]);
        Ok(self.blocks[block].mix.forward(tape, both))
    }

    /// Full forward pass.
    ///
    /// `inputs` are raw node inputs (`N × in_channels`) for the linear lift;
    /// `boundary` holds raw boundary values and coordinates for the encoder
    /// lifts. The result is in physical output units.
    pub fn forward<'a>(
        &self,
        tape: &mut Tape<'a>,
        graph: &'a SpatialGraph,
        inputs: Option<Var>,
        boundary: Option<(Var, Var)>,
    ) -> Result<Var> {
        self.check_graph(graph)?;
        let mut v = match self.config.lift {
            LiftKind::Linear => {
                let a = inputs.ok_or_else(|| Error::ShapeMismatch("linear lift needs node inputs".into()))?;
                self.lift(tape, graph, a)?
            }
            kind => {
                let (vals, xs) =
                    boundary.ok_or_else(|| Error::ShapeMismatch("encoder lift needs boundary data".into()))?;
                let enc = self.encoder.as_ref().expect("encoder params exist for encoder lifts");
                let h1 = enc.encode_fixed(self, tape, graph.coords(), vals)?;
                if kind == LiftKind::EncoderGeo {
                    enc.encode_variable(self, tape, h1, vals, xs)?
                } else {
                    h1
                }
            }
        };
        for t in 0..self.blocks.len() {
            v = self.block(tape, graph, v, t)?;
        }
        let y = self.proj.forward(tape, v);
        let scale = tape.constant(self.normalizer.out_std.clone().insert_axis(Axis(0)));
        let shift = tape.constant(self.normalizer.out_mean.clone().insert_axis(Axis(0)));
        let y = tape.mul_row(y, scale);
        let mut y = tape.add_row(y, shift);
        if self.config.residual_output {
            let a = inputs.expect("residual output implies linear lift");
            let last = tape.slice_cols(a, 0, self.config.out_channels);
            y = tape.add(y, last);
        }
        Ok(y)
    }

    /// Forward pass without gradient tracking.
    pub fn predict(&self, graph: &SpatialGraph, inputs: Option<&Mat>, boundary: Option<(&Mat, &Mat)>) -> Result<Mat> {
        let mut tape = Tape::new(&self.params);
        let a = inputs.map(|m| tape.constant(m.clone()));
        let b = boundary.map(|(v, x)| (tape.constant(v.clone()), tape.constant(x.clone())));
        let y = self.forward(&mut tape, graph, a, b)?;
        Ok(tape.value(y).clone())
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.id(name)
    }
}

impl GateParams {
    fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, prefix: &str, cfg: &OperatorConfig) -> Self {
        let (ne, ef, gh) = (cfg.embedding_dim, cfg.edge_feature_dim, cfg.gating_hidden);
        let fan_in = 2 * ne + ef;
        let b = 1.0 / (fan_in as f64).sqrt();
        let mut u = |r: usize, c: usize, bound: f64| Array2::from_shape_fn((r, c), |_| rng.gen_range(-bound..bound));
        let w1_src = store.insert(format!("{prefix}.gate.w1_src"), vec![ne, gh], u(ne, gh, b));
        let w1_tgt = store.insert(format!("{prefix}.gate.w1_tgt"), vec![ne, gh], u(ne, gh, b));
        let w1_edge = store.insert(format!("{prefix}.gate.w1_edge"), vec![ef, gh], u(ef, gh, b));
        let b1 = store.insert(format!("{prefix}.gate.b1"), vec![gh], u(1, gh, b));
        let w2 = store.insert(format!("{prefix}.gate.w2"), vec![1, ef], u(1, ef, 1.0));
        let b3b = 1.0 / (gh as f64).sqrt();
        let w3 = store.insert(format!("{prefix}.gate.w3"), vec![gh, 1], u(gh, 1, b3b));
        let b3 = store.insert(
            format!("{prefix}.gate.b3"),
            vec![1],
            Array2::from_elem((1, 1), GATE_BIAS_INIT),
        );
        Self {
            w1_src,
            w1_tgt,
            w1_edge,
            b1,
            w2,
            w3,
            b3,
        }
    }
}

/// Row-permute a node field: row `i` of the result is row `perm[i]`.
pub fn permute_rows(m: &Mat, perm: &[usize]) -> Mat {
    m.select(Axis(0), perm)
}

#[cfg(test)]
mod tests;
