//! Geometry awareness: boundary-value interpolation into the domain, and
//! learnable coordinate / boundary / geometry encoders.
//!
//! Encoder strategy, per node `u`:
//!
//! ```text
//! τ_u = P_coor(x_u)                     pointwise
//! β   = mean_b P_BC(g_b)                pooled over boundary points
//! H₁_u = F₁(τ_u ‖ β)
//! ζ   = Z · mean_b P_geo(g_b ‖ x_b)     pooled, then mapped to d_v
//! H₂_u = F₂(H₁_u ⊙ ζ)
//! ```

use ndarray::{Array2, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Mat, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::{displacement, SpatialGraph};
use crate::operator::{LiftKind, Linear, Mlp, Operator, OperatorConfig};

/// Distances below this snap to the boundary value.
pub const SNAP_DISTANCE: f64 = 1e-12;

/// How boundary data reaches the operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GeometryStrategy {
    /// Boundary values at boundary nodes, zero elsewhere.
    None,
    /// Per-segment inverse-distance interpolation into the domain.
    Interpolate,
    Encoder,
    EncoderGeo,
}

impl GeometryStrategy {
    pub fn lift(self) -> LiftKind {
        match self {
            Self::None | Self::Interpolate => LiftKind::Linear,
            Self::Encoder => LiftKind::Encoder,
            Self::EncoderGeo => LiftKind::EncoderGeo,
        }
    }
}

/// Boundary samples: coordinates, values and segment labels.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryData {
    pub bc_coords: Array2<f64>,
    pub bc_values: Array2<f64>,
    pub segment_id: Vec<i64>,
    /// Graph node carrying each boundary sample, when known.
    pub node_idx: Option<Vec<usize>>,
}

impl BoundaryData {
    pub fn len(&self) -> usize {
        self.bc_coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.bc_coords.nrows() == 0
    }

    pub fn channels(&self) -> usize {
        self.bc_values.ncols()
    }

    /// Samples at graph boundary nodes whose segment is in `segments`;
    /// `values` has one row per graph node.
    pub fn from_graph(graph: &SpatialGraph, values: &ArrayView2<f64>, segments: Option<&[i64]>) -> Self {
        let idx: Vec<usize> = graph
            .boundary_nodes()
            .into_iter()
            .filter(|&i| segments.map_or(true, |s| s.contains(&graph.segment_id()[i])))
            .collect();
        Self {
            bc_coords: graph.coords().select(ndarray::Axis(0), &idx),
            bc_values: values.select(ndarray::Axis(0), &idx),
            segment_id: idx.iter().map(|&i| graph.segment_id()[i]).collect(),
            node_idx: Some(idx),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.bc_coords.nrows();
        if self.bc_values.nrows() != n || self.segment_id.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "boundary data: {n} coordinates, {} values, {} segment ids",
                self.bc_values.nrows(),
                self.segment_id.len()
            )));
        }
        if self.segment_id.iter().any(|&s| s < 0) {
            return Err(Error::DegenerateInput(
                "boundary sample with negative segment id".into(),
            ));
        }
        Ok(())
    }

    /// Reorder samples: new sample `i` is old sample `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            bc_coords: self.bc_coords.select(ndarray::Axis(0), perm),
            bc_values: self.bc_values.select(ndarray::Axis(0), perm),
            segment_id: perm.iter().map(|&i| self.segment_id[i]).collect(),
            node_idx: self.node_idx.as_ref().map(|v| perm.iter().map(|&i| v[i]).collect()),
        }
    }
}

/// Inverse-distance (power 2) interpolation of each boundary segment's
/// values onto every node of `graph`.
///
/// Output is `N × (d_a · s)` with column `j·s + i` holding channel `j` of
/// segment `i`. A node closer than [`SNAP_DISTANCE`] to a segment sample
/// takes that sample's value.
pub fn interpolate_bc(graph: &SpatialGraph, bdata: &BoundaryData, n_segments: usize) -> Result<Array2<f64>> {
    interpolate_at(graph.coords().view(), graph.cloud.period.as_deref(), bdata, n_segments)
}

pub fn interpolate_at(
    points: ArrayView2<f64>,
    period: Option<&[f64]>,
    bdata: &BoundaryData,
    n_segments: usize,
) -> Result<Array2<f64>> {
    bdata.validate()?;
    if n_segments == 0 {
        return Err(Error::DegenerateInput(
            "interpolation needs at least one segment".into(),
        ));
    }
    let da = bdata.channels();
    let mut by_seg: Vec<Vec<usize>> = vec![Vec::new(); n_segments];
    for (b, &s) in bdata.segment_id.iter().enumerate() {
        if (s as usize) < n_segments {
            by_seg[s as usize].push(b);
        }
    }
    if let Some(i) = by_seg.iter().position(|v| v.is_empty()) {
        return Err(Error::EmptySegment(i));
    }
    let n = points.nrows();
    let mut out = Array2::zeros((n, da * n_segments));
    let mut acc = vec![0.0; da];
    for p in 0..n {
        for (i, samples) in by_seg.iter().enumerate() {
            acc.iter_mut().for_each(|a| *a = 0.0);
            let mut wsum = 0.0;
            let mut snapped = None;
            for &b in samples {
                let dx = displacement(points.row(p), bdata.bc_coords.row(b), period);
                let r2: f64 = dx.iter().map(|x| x * x).sum();
                if r2.sqrt() < SNAP_DISTANCE {
                    snapped = Some(b);
                    break;
                }
                let w = 1.0 / r2;
                wsum += w;
                for (j, a) in acc.iter_mut().enumerate() {
                    *a += w * bdata.bc_values[[b, j]];
                }
            }
            for j in 0..da {
                out[[p, j * n_segments + i]] = match snapped {
                    Some(b) => bdata.bc_values[[b, j]],
                    None => acc[j] / wsum,
                };
            }
        }
    }
    Ok(out)
}

/// Encoder networks; `geo` and `zeta_map` exist only for the geometry-aware
/// variant.
#[derive(Clone, Debug)]
pub struct EncoderParams {
    pub coor: Mlp,
    pub bc: Mlp,
    pub decoder1: Mlp,
    pub geo: Option<Mlp>,
    pub zeta_map: Option<Linear>,
    pub decoder2: Option<Mlp>,
}

impl EncoderParams {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, cfg: &OperatorConfig, with_geometry: bool) -> Self {
        let (dh, dv, da, d) = (cfg.encoder_hidden, cfg.hidden_channels, cfg.in_channels, cfg.coord_dim);
        let act = cfg.activation;
        let coor = Mlp::new(store, rng, "encoder.coor", &[d, dh, dh], act);
        let bc = Mlp::new(store, rng, "encoder.bc", &[da, dh, dh], act);
        let decoder1 = Mlp::new(store, rng, "encoder.decoder1", &[2 * dh, dh, dh, dv], act);
        let (geo, zeta_map, decoder2) = if with_geometry {
            (
                Some(Mlp::new(store, rng, "encoder.geo", &[da + d, dh, dh], act)),
                Some(Linear::new(store, rng, "encoder.zeta_map", dh, dv, true)),
                Some(Mlp::new(store, rng, "encoder.decoder2", &[dv, dv, dv], act)),
            )
        } else {
            (None, None, None)
        };
        Self {
            coor,
            bc,
            decoder1,
            geo,
            zeta_map,
            decoder2,
        }
    }

    /// `β`: pooled boundary-value encoding, `1 × d_hidden`.
    pub fn beta(&self, op: &Operator, tape: &mut Tape, bc_values: Var) -> Var {
        let g = Operator::normalize(tape, bc_values, &op.normalizer.in_mean, &op.normalizer.in_std);
        let e = self.bc.forward(tape, g);
        tape.mean_rows(e)
    }

    /// `ζ`: pooled geometry encoding mapped to `1 × d_v`.
    pub fn zeta(&self, op: &Operator, tape: &mut Tape, bc_values: Var, bc_coords: Var) -> Result<Var> {
        let (geo, map) = match (&self.geo, &self.zeta_map) {
            (Some(g), Some(m)) => (g, m),
            _ => return Err(Error::Config("geometry encoder not configured".into())),
        };
        let g = Operator::normalize(tape, bc_values, &op.normalizer.in_mean, &op.normalizer.in_std);
        let x = Operator::normalize(tape, bc_coords, &op.normalizer.coord_mean, &op.normalizer.coord_std);
        let gx = tape.concat(&[g, x]);
        let e = geo.forward(tape, gx);
        let pooled = tape.mean_rows(e);
        Ok(map.forward(tape, pooled))
    }

    /// `H₁ = F₁(τ ‖ β)`, `N × d_v`.
    pub fn encode_fixed(&self, op: &Operator, tape: &mut Tape, coords: &Mat, bc_values: Var) -> Result<Var> {
        let (nb, da) = tape.shape(bc_values);
        if da != op.config.in_channels || nb == 0 {
            return Err(Error::ShapeMismatch(format!(
                "boundary values are {nb} x {da}, expected N_BC x {}",
                op.config.in_channels
            )));
        }
        let x = op.normalized_coords(tape, coords);
        let tau = self.coor.forward(tape, x);
        let beta = self.beta(op, tape, bc_values);
        let beta = tape.broadcast_rows(beta, coords.nrows());
        let cat = tape.concat(&[tau, beta]);
        Ok(self.decoder1.forward(tape, cat))
    }

    /// `H₂ = F₂(H₁ ⊙ ζ)`.
    pub fn encode_variable(
        &self,
        op: &Operator,
        tape: &mut Tape,
        h1: Var,
        bc_values: Var,
        bc_coords: Var,
    ) -> Result<Var> {
        let (nb, d) = tape.shape(bc_coords);
        if d != op.config.coord_dim || nb != tape.shape(bc_values).0 {
            return Err(Error::ShapeMismatch(format!(
                "boundary coordinates are {nb} x {d} for {} values",
                tape.shape(bc_values).0
            )));
        }
        let zeta = self.zeta(op, tape, bc_values, bc_coords)?;
        let fused = tape.mul_row(h1, zeta);
        let f2 = self.decoder2.as_ref().expect("decoder2 exists with geometry encoder");
        Ok(f2.forward(tape, fused))
    }
}

/// `H₁` for raw arrays.
pub fn encode_fixed_geometry(op: &Operator, coords: &Mat, bdata: &BoundaryData) -> Result<Mat> {
    let enc = op
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Config("operator has no encoder".into()))?;
    let mut tape = Tape::new(&op.params);
    let vals = tape.constant(bdata.bc_values.clone());
    let h = enc.encode_fixed(op, &mut tape, coords, vals)?;
    Ok(tape.value(h).clone())
}

/// `H₂` for raw arrays.
pub fn encode_variable_geometry(op: &Operator, coords: &Mat, bdata: &BoundaryData) -> Result<Mat> {
    let enc = op
        .encoder
        .as_ref()
        .ok_or_else(|| Error::Config("operator has no encoder".into()))?;
    let mut tape = Tape::new(&op.params);
    let vals = tape.constant(bdata.bc_values.clone());
    let xs = tape.constant(bdata.bc_coords.clone());
    let h1 = enc.encode_fixed(op, &mut tape, coords, vals)?;
    let h2 = enc.encode_variable(op, &mut tape, h1, vals, xs)?;
    Ok(tape.value(h2).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_knn_graph, PointCloud};
    use crate::operator::LiftKind;
    use ndarray::array;

    fn square_grid(n: usize) -> SpatialGraph {
        let h = 1.0 / (n - 1) as f64;
        let coords = Array2::from_shape_fn(
            (n * n, 2),
            |(p, j)| if j == 0 { (p % n) as f64 * h } else { (p / n) as f64 * h },
        );
        let mut cloud = PointCloud::interior(coords);
        for p in 0..n * n {
            let (ix, iy) = (p % n, p / n);
            // edges: 0 bottom, 1 right, 2 top, 3 left; corners go to the first match
            let seg = if iy == 0 {
                0
            } else if ix == n - 1 {
                1
            } else if iy == n - 1 {
                2
            } else if ix == 0 {
                3
            } else {
                -1
            };
            cloud.segment_id[p] = seg;
            cloud.boundary_mask[p] = seg >= 0;
        }
        build_knn_graph(cloud, 4).unwrap()
    }

    #[test]
    fn constant_boundary_gives_constant_field() {
        let g = square_grid(6);
        let vals = Array2::from_elem((g.len(), 1), 2.5);
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let single = BoundaryData {
            segment_id: vec![0; b.len()],
            ..b
        };
        let f = interpolate_bc(&g, &single, 1).unwrap();
        assert!(f.iter().all(|&v| (v - 2.5).abs() < 1e-12));
    }

    #[test]
    fn boundary_nodes_reproduce_their_segment_value() {
        let g = square_grid(7);
        let vals = Array2::from_shape_fn((g.len(), 2), |(p, c)| (p * 3 + c) as f64 * 0.1);
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let f = interpolate_bc(&g, &b, 4).unwrap();
        for (k, &node) in b.node_idx.as_ref().unwrap().iter().enumerate() {
            let s = b.segment_id[k] as usize;
            for c in 0..2 {
                assert_eq!(f[[node, c * 4 + s]], vals[[node, c]]);
            }
        }
    }

    #[test]
    fn per_edge_constants_on_five_by_five() {
        let g = square_grid(5);
        let vals = Array2::from_shape_fn((g.len(), 1), |(p, _)| (g.segment_id()[p] + 1) as f64);
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let f = interpolate_bc(&g, &b, 4).unwrap();
        let center = 12;
        for i in 0..4 {
            // each segment is constant, so the IDW mean is that constant
            assert!((f[[center, i]] - (i + 1) as f64).abs() < 1e-12);
        }
        // hand IDW at (0.25, 0.5) over segment 0 (bottom edge y = 0, x = 0..1 step 0.25)
        let q = array![[0.25, 0.5]];
        let lin = BoundaryData {
            bc_coords: array![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0], [1.0, 0.0]],
            bc_values: array![[0.0], [1.0], [2.0], [3.0], [4.0]],
            segment_id: vec![0; 5],
            node_idx: None,
        };
        let r2 = [0.0625 + 0.25, 0.25, 0.0625 + 0.25, 0.25 + 0.25, 0.5625 + 0.25];
        let (mut num, mut den) = (0.0, 0.0);
        for (k, r) in r2.iter().enumerate() {
            num += k as f64 / r;
            den += 1.0 / r;
        }
        let v = interpolate_at(q.view(), None, &lin, 1).unwrap();
        assert!((v[[0, 0]] - num / den).abs() < 1e-12);
    }

    #[test]
    fn empty_segment_is_reported() {
        let g = square_grid(5);
        let vals = Array2::zeros((g.len(), 1));
        let b = BoundaryData::from_graph(&g, &vals.view(), Some(&[0, 1, 3]));
        assert!(matches!(interpolate_bc(&g, &b, 4), Err(Error::EmptySegment(2))));
    }

    fn encoder_op(geo: bool) -> Operator {
        Operator::new(OperatorConfig {
            in_channels: 1,
            hidden_channels: 8,
            out_channels: 1,
            num_blocks: 1,
            modes: 4,
            gating_hidden: 4,
            embedding_dim: 3,
            encoder_hidden: 6,
            lift: if geo { LiftKind::EncoderGeo } else { LiftKind::Encoder },
            seed: 5,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn boundary_order_does_not_matter() {
        let op = encoder_op(true);
        let g = square_grid(5);
        let vals = Array2::from_shape_fn((g.len(), 1), |(p, _)| (p as f64 * 0.37).sin());
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let perm: Vec<usize> = (0..b.len()).rev().collect();
        let bp = b.permuted(&perm);
        let h = encode_variable_geometry(&op, g.coords(), &b).unwrap();
        let hp = encode_variable_geometry(&op, g.coords(), &bp).unwrap();
        for (x, y) in h.iter().zip(hp.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn zeta_of_ones_leaves_h1_unmodulated() {
        let mut op = encoder_op(true);
        let map = op.encoder.as_ref().unwrap().zeta_map.clone().unwrap();
        op.params.get_mut(map.weight).fill(0.0);
        op.params.get_mut(map.bias.unwrap()).fill(1.0);
        let g = square_grid(5);
        let vals = Array2::from_shape_fn((g.len(), 1), |(p, _)| p as f64);
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let h1 = encode_fixed_geometry(&op, g.coords(), &b).unwrap();
        let h2 = encode_variable_geometry(&op, g.coords(), &b).unwrap();
        let enc = op.encoder.as_ref().unwrap();
        let mut tape = Tape::new(&op.params);
        let x = tape.constant(h1);
        let f = enc.decoder2.as_ref().unwrap().forward(&mut tape, x);
        for (a, b) in tape.value(f).iter().zip(h2.iter()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_parameters_with_bias_give_constant_h1() {
        let mut op = encoder_op(false);
        let last = op.encoder.as_ref().unwrap().decoder1.layers.last().unwrap().clone();
        op.params.get_mut(last.weight).fill(0.0);
        op.params.get_mut(last.bias.unwrap()).fill(0.75);
        let g = square_grid(4);
        let vals = Array2::from_elem((g.len(), 1), 1.0);
        let b = BoundaryData::from_graph(&g, &vals.view(), None);
        let h1 = encode_fixed_geometry(&op, g.coords(), &b).unwrap();
        assert!(h1.iter().all(|&v| v == 0.75));
    }
}
