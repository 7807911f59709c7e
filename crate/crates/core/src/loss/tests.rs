use super::*;
use crate::graph::{build_knn_graph, GraphParams, PointCloud};
use crate::operator::OperatorConfig;
use crate::stencil::StencilParams;
use ndarray::array;

struct Zero;

impl ResidualSpec for Zero {
    fn required_orders(&self) -> &'static [u8] {
        &[0]
    }

    fn residual(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        Ok(ctx.tape.scale(u, 0.0))
    }
}

/// `Δu = f` with `f` from the problem inputs.
struct Poisson;

impl ResidualSpec for Poisson {
    fn required_orders(&self) -> &'static [u8] {
        &[2]
    }

    fn residual(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let lap = ctx.laplacian(u)?;
        let f = ctx.inputs()?;
        Ok(ctx.tape.sub(lap, f))
    }
}

/// `u_t = Δu`.
struct Heat;

impl ResidualSpec for Heat {
    fn required_orders(&self) -> &'static [u8] {
        &[2]
    }

    fn rhs(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        ctx.laplacian(u)
    }
}

/// `u_t = −u_x·u`, exercising first derivatives and nonlinearity.
struct Advect;

impl ResidualSpec for Advect {
    fn required_orders(&self) -> &'static [u8] {
        &[1]
    }

    fn rhs(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let ux = ctx.dx(u, 0)?;
        let p = ctx.tape.mul(u, ux);
        Ok(ctx.tape.scale(p, -1.0))
    }
}

/// Returns the newest state in its window.
struct Persist(ParamStore);

impl FieldModel for Persist {
    fn params(&self) -> &ParamStore {
        &self.0
    }

    fn eval_nodes<'a>(&'a self, tape: &mut Tape<'a>, _graph: &'a SpatialGraph, inputs: Var) -> Result<Var> {
        Ok(tape.slice_cols(inputs, 0, 1))
    }
}

fn ring(n: usize, modes: usize) -> (SpatialGraph, StencilSet) {
    let coords = Array2::from_shape_fn((n, 1), |(i, _)| i as f64 / n as f64);
    let cloud = PointCloud::periodic(coords, vec![1.0]);
    let g = build_knn_graph(cloud, 2)
        .unwrap()
        .compute_spectrum(modes)
        .unwrap()
        .compute_lipschitz_embeddings(2, 0);
    let s = StencilSet::with_params(&g.cloud, &StencilParams::default()).unwrap();
    (g, s)
}

fn square(n: usize) -> (SpatialGraph, StencilSet) {
    let h = 1.0 / (n - 1) as f64;
    let coords = Array2::from_shape_fn(
        (n * n, 2),
        |(i, j)| if j == 0 { (i / n) as f64 * h } else { (i % n) as f64 * h },
    );
    let mut cloud = PointCloud::interior(coords);
    for i in 0..n * n {
        let (a, b) = (i / n, i % n);
        cloud.boundary_mask[i] = a == 0 || b == 0 || a == n - 1 || b == n - 1;
        cloud.segment_id[i] = if cloud.boundary_mask[i] { 0 } else { -1 };
    }
    let params = GraphParams {
        k: 6,
        modes: Some(8),
        n_emb: 3,
        seed: 1,
        jitter_duplicates: false,
    };
    let g = SpatialGraph::prepare(cloud, &params).unwrap();
    let s = StencilSet::with_params(&g.cloud, &StencilParams::default()).unwrap();
    (g, s)
}

fn small_op(in_ch: usize, dim: usize, residual: bool) -> Operator {
    Operator::new(OperatorConfig {
        in_channels: in_ch,
        hidden_channels: 6,
        out_channels: 1,
        num_blocks: 1,
        modes: 8,
        gating_hidden: 4,
        edge_feature_dim: 2,
        embedding_dim: if dim == 1 { 2 } else { 3 },
        coord_dim: dim,
        residual_output: residual,
        seed: 3,
        ..Default::default()
    })
    .unwrap()
}

#[test]
fn report_total_identity() {
    let r = LossReport::new(0.3, 0.07, 10.0);
    assert_eq!(r.total, 0.3 + 10.0 * 0.07);
    let m = LossReport::mean(&[r, LossReport::new(0.1, 0.01, 10.0)], 10.0);
    assert_eq!(m.total, m.pde_loss + 10.0 * m.bc_loss);
    assert!((m.residual_rms() - (m.pde_loss + m.bc_loss).sqrt()).abs() < 1e-15);
}

fn stationary_fixture(n: usize) -> (SpatialGraph, StencilSet, Mat, Arc<Vec<usize>>, Dirichlet) {
    let (g, s) = square(n);
    let f = Array2::from_shape_fn((g.len(), 1), |(i, _)| (i as f64 * 0.37).sin());
    let interior = Arc::new(g.interior_nodes());
    let nodes = g.boundary_nodes();
    let values = Array2::from_shape_fn((nodes.len(), 1), |(i, _)| 0.1 * i as f64);
    (
        g,
        s,
        f,
        interior,
        Dirichlet {
            nodes: Arc::new(nodes),
            values,
        },
    )
}

#[test]
fn zero_residual_and_zero_beta() {
    let (g, s, f, interior, bc) = stationary_fixture(8);
    let op = small_op(1, 2, false);
    let sample = StationarySample {
        graph: &g,
        stencils: Some(&s),
        input: ModelInput::Nodes(&f),
        problem_inputs: Some(&f),
        pde_nodes: &interior,
        dirichlet: Some(&bc),
    };
    let r = stationary_loss(&op, &Zero, &[sample], 10.0).unwrap();
    assert_eq!(r.pde_loss, 0.0);
    assert!(r.bc_loss > 0.0);
    let r0 = stationary_loss(&op, &Poisson, &[sample], 0.0).unwrap();
    assert_eq!(r0.total, r0.pde_loss);
}

#[test]
fn missing_stencils_are_reported() {
    let (g, _s, f, interior, _) = stationary_fixture(6);
    let op = small_op(1, 2, false);
    let sample = StationarySample {
        graph: &g,
        stencils: None,
        input: ModelInput::Nodes(&f),
        problem_inputs: Some(&f),
        pde_nodes: &interior,
        dirichlet: None,
    };
    assert!(matches!(
        stationary_loss(&op, &Poisson, &[sample], 1.0),
        Err(Error::MissingDerivativeOrder(2))
    ));
    // order-0 residuals need no stencils
    assert!(stationary_loss(&op, &Zero, &[sample], 1.0).is_ok());
}

#[test]
fn exact_field_has_zero_boundary_loss() {
    let (g, s, _, interior, _) = stationary_fixture(9);
    let x = g.coords();
    let u = Array2::from_shape_fn((g.len(), 1), |(i, _)| x[[i, 0]] * x[[i, 0]] + x[[i, 1]]);
    let f = Array2::from_elem((g.len(), 1), 2.0);
    let nodes = g.boundary_nodes();
    let values = Array2::from_shape_fn((nodes.len(), 1), |(i, _)| u[[nodes[i], 0]]);
    let bc = Dirichlet {
        nodes: Arc::new(nodes),
        values,
    };
    let model = FixedField::new(u);
    let sample = StationarySample {
        graph: &g,
        stencils: Some(&s),
        input: ModelInput::Nodes(&f),
        problem_inputs: Some(&f),
        pde_nodes: &interior,
        dirichlet: Some(&bc),
    };
    let r = stationary_loss(&model, &Poisson, &[sample], 10.0).unwrap();
    assert_eq!(r.bc_loss, 0.0);
    // quadratic fields are reproduced up to the stencil error
    assert!(r.pde_loss < 1.0, "{r:?}");
}

fn fd_one_param<F: Fn(&Operator) -> f64>(op: &Operator, name: &str, idx: usize, loss: F, analytic: f64) {
    let id = op.param_id(name).unwrap();
    let h = 1e-5;
    let mut p = op.clone();
    p.params.get_mut(id).as_slice_mut().unwrap()[idx] += h;
    let mut m = op.clone();
    m.params.get_mut(id).as_slice_mut().unwrap()[idx] -= h;
    let fd = (loss(&p) - loss(&m)) / (2.0 * h);
    assert!(analytic.abs() > 1e-8, "gradient vanished for {name}");
    let rel = (fd - analytic).abs() / fd.abs().max(analytic.abs());
    assert!(rel < 1e-4, "{name}: fd {fd}, analytic {analytic}");
}

#[test]
fn stationary_gradient_matches_finite_difference() {
    let (g, s, f, interior, bc) = stationary_fixture(7);
    let op = small_op(1, 2, false);
    let sample = StationarySample {
        graph: &g,
        stencils: Some(&s),
        input: ModelInput::Nodes(&f),
        problem_inputs: Some(&f),
        pde_nodes: &interior,
        dirichlet: Some(&bc),
    };
    let samples = [sample, sample];
    let (r, grads) = stationary_loss_grad(&op, &Poisson, &samples, 10.0).unwrap();
    let r2 = stationary_loss(&op, &Poisson, &samples, 10.0).unwrap();
    assert_eq!(r, r2);
    let name = "blocks.0.mix.weight";
    let an = grads.get(op.param_id(name).unwrap())[[2, 1]];
    let idx = 2 * 6 + 1;
    fd_one_param(
        &op,
        name,
        idx,
        |o| stationary_loss(o, &Poisson, &samples, 10.0).unwrap().total,
        an,
    );
}

#[test]
fn crank_nicolson_trivial_and_shape() {
    let u = array![[1.0], [2.0]];
    let z = Array2::zeros((2, 1));
    assert!(crank_nicolson_residual(&u, &u, &z, &z, 0.1)
        .unwrap()
        .iter()
        .all(|&x| x == 0.0));
    assert!(matches!(
        crank_nicolson_residual(&u, &Array2::zeros((3, 1)), &z, &z, 0.1),
        Err(Error::ShapeMismatch(_))
    ));
}

fn decay_residual(dt: f64) -> f64 {
    // u' = −u from u = 1
    let u0 = array![[1.0]];
    let u1 = array![[(-dt).exp()]];
    let r = crank_nicolson_residual(&u1, &u0, &(-&u1), &(-&u0), dt).unwrap();
    r[[0, 0]].abs()
}

#[test]
fn crank_nicolson_local_error_is_third_order() {
    assert!(decay_residual(0.01) < 1e-6);
    let ratio = decay_residual(0.02) / decay_residual(0.01);
    assert!((6.0..=10.0).contains(&ratio), "ratio {ratio}");
}

#[test]
fn window_padding_and_sliding() {
    assert_eq!(window_indices(1, 3), vec![0, 0, 0]);
    assert_eq!(window_indices(2, 3), vec![1, 0, 0]);
    assert_eq!(window_indices(3, 3), vec![2, 1, 0]);
    assert_eq!(window_indices(4, 3), vec![3, 2, 1]);
    let hist: Vec<Mat> = (0..4).map(|i| Array2::from_elem((2, 1), i as f64)).collect();
    let w = build_window(&hist, 3);
    assert_eq!(w, array![[3.0, 2.0, 1.0], [3.0, 2.0, 1.0]]);
    let w1 = build_window(&hist[..1], 3);
    assert_eq!(w1, Array2::<f64>::zeros((2, 3)));
}

/// Straightforward reference for the padded window.
fn reference_window(history_len: usize, k: usize) -> Vec<usize> {
    let n = history_len - 1;
    let mut out: Vec<usize> = (0..=n).rev().take(k).collect();
    while out.len() < k {
        out.push(0);
    }
    out
}

#[test]
fn window_matches_reference_builder() {
    for k in 1..8 {
        for len in 1..20 {
            assert_eq!(window_indices(len, k), reference_window(len, k), "len {len} k {k}");
        }
    }
}

fn rollout_fixture() -> (SpatialGraph, StencilSet, Arc<Vec<usize>>) {
    let (g, s) = ring(24, 8);
    let all = Arc::new((0..24).collect());
    (g, s, all)
}

#[test]
fn identity_model_on_zero_heat_state_has_zero_loss() {
    let (g, s, all) = rollout_fixture();
    let hist = vec![Array2::zeros((24, 1))];
    let sample = RolloutSample {
        graph: &g,
        stencils: Some(&s),
        history: &hist,
        problem_inputs: None,
        pde_nodes: &all,
        dirichlet: None,
    };
    let p = RolloutParams {
        k: 3,
        steps: 5,
        dt: 0.01,
        beta: 1.0,
        full_backprop: false,
    };
    let out = rollout_loss(&Persist(ParamStore::new()), &Heat, &[sample], &p, false).unwrap();
    assert_eq!(out.report.total, 0.0);
    assert_eq!(out.trajectories[0].len(), 6);
}

#[test]
fn rollout_gradient_modes() {
    let (g, s, all) = rollout_fixture();
    let x = g.coords();
    let u0 = Array2::from_shape_fn((24, 1), |(i, _)| (2.0 * std::f64::consts::PI * x[[i, 0]]).sin());
    let hist = vec![u0];
    let sample = RolloutSample {
        graph: &g,
        stencils: Some(&s),
        history: &hist,
        problem_inputs: None,
        pde_nodes: &all,
        dirichlet: None,
    };
    let op = small_op(2, 1, true);
    let mut p = RolloutParams {
        k: 2,
        steps: 1,
        dt: 0.05,
        beta: 1.0,
        full_backprop: false,
    };
    // a single step is the same computation in both modes
    let a = rollout_loss(&op, &Advect, &[sample], &p, true).unwrap();
    p.full_backprop = true;
    let b = rollout_loss(&op, &Advect, &[sample], &p, true).unwrap();
    assert!((a.report.total - b.report.total).abs() < 1e-14);
    for (x, y) in a
        .grads
        .as_ref()
        .unwrap()
        .as_slice()
        .iter()
        .zip(b.grads.as_ref().unwrap().as_slice())
    {
        for (u, v) in x.iter().zip(y.iter()) {
            assert!((u - v).abs() < 1e-10);
        }
    }
    // full backprop over several steps is the exact gradient of the loss
    p.steps = 3;
    let full = rollout_loss(&op, &Advect, &[sample], &p, true).unwrap();
    let name = "lift.weight";
    let an = full.grads.unwrap().get(op.param_id(name).unwrap())[[0, 3]];
    fd_one_param(
        &op,
        name,
        3,
        |o| rollout_loss(o, &Advect, &[sample], &p, false).unwrap().report.total,
        an,
    );
    // truncated mode gives the same loss value, different gradient
    p.full_backprop = false;
    let trunc = rollout_loss(&op, &Advect, &[sample], &p, true).unwrap();
    assert!((trunc.report.total - full.report.total).abs() < 1e-12);
    let predicted = rollout_predict(&op, &g, &hist, 2, 3).unwrap();
    for (a, b) in predicted.iter().zip(&trunc.trajectories[0]) {
        assert!((a - b).iter().all(|d| d.abs() < 1e-12));
    }
}

#[test]
fn non_finite_rollout_aborts_with_step() {
    let (g, s, all) = rollout_fixture();
    let mut u0 = Array2::zeros((24, 1));
    u0[[3, 0]] = f64::INFINITY;
    let hist = vec![u0];
    let sample = RolloutSample {
        graph: &g,
        stencils: Some(&s),
        history: &hist,
        problem_inputs: None,
        pde_nodes: &all,
        dirichlet: None,
    };
    let p = RolloutParams {
        k: 1,
        steps: 2,
        dt: 0.01,
        beta: 1.0,
        full_backprop: false,
    };
    assert!(matches!(
        rollout_loss(&Persist(ParamStore::new()), &Heat, &[sample], &p, false),
        Err(Error::NonFiniteLoss { step: 0, .. })
    ));
}
