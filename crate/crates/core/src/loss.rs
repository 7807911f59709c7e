//! Physics-informed objectives.
//!
//! Stationary problems use `mean(R(u)²)` over PDE nodes plus a `β`-weighted
//! boundary mismatch. Time-dependent problems roll the model out
//! autoregressively and penalize the Crank–Nicolson residual
//! `u_{n+1} − u_n − Δt/2 (F(u_{n+1}) + F(u_n))` at every step.
//!
//! All reductions are means, so `β` does not depend on resolution.

use std::sync::Arc;

use ndarray::{concatenate, Array2, Axis};
use rayon::prelude::*;

use crate::autodiff::{GradBuffer, Mat, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::SpatialGraph;
use crate::operator::{LiftKind, Operator};
use crate::stencil::StencilSet;

/// Boundary weight used when a config does not set one.
pub const BETA_DIRICHLET: f64 = 10.0;
pub const BETA_PERIODIC: f64 = 1.0;

/// Everything a residual may read for one sample.
pub struct ResidualCtx<'t, 'a> {
    pub tape: &'t mut Tape<'a>,
    pub graph: &'a SpatialGraph,
    stencils: Option<&'a StencilSet>,
    inputs: Option<&'a Mat>,
    pub time: f64,
    declared: &'static [u8],
}

impl<'t, 'a> ResidualCtx<'t, 'a> {
    pub fn new(
        tape: &'t mut Tape<'a>,
        graph: &'a SpatialGraph,
        stencils: Option<&'a StencilSet>,
        inputs: Option<&'a Mat>,
        time: f64,
        declared: &'static [u8],
    ) -> Self {
        Self {
            tape,
            graph,
            stencils,
            inputs,
            time,
            declared,
        }
    }

    fn stencils(&self, order: u8) -> Result<&'a StencilSet> {
        debug_assert!(
            self.declared.contains(&order),
            "residual reads derivative order {order} but declares {:?}",
            self.declared
        );
        self.stencils.ok_or(Error::MissingDerivativeOrder(order))
    }

    /// Problem inputs (e.g. a source term) as a constant node.
    pub fn inputs(&mut self) -> Result<Var> {
        let m = self
            .inputs
            .ok_or_else(|| Error::ShapeMismatch("residual needs problem inputs".into()))?;
        Ok(self.tape.constant_ref(m))
    }

    pub fn channel(&mut self, u: Var, c: usize) -> Var {
        self.tape.slice_cols(u, c, 1)
    }

    pub fn dx(&mut self, u: Var, j: usize) -> Result<Var> {
        let s = self.stencils(1)?;
        Ok(s.grad_var(self.tape, u, j))
    }

    pub fn dxx(&mut self, u: Var, j: usize, k: usize) -> Result<Var> {
        let s = self.stencils(2)?;
        Ok(s.hess_var(self.tape, u, j, k))
    }

    pub fn laplacian(&mut self, u: Var) -> Result<Var> {
        let s = self.stencils(2)?;
        let mut acc = s.hess_var(self.tape, u, 0, 0);
        for j in 1..s.dim() {
            let h = s.hess_var(self.tape, u, j, j);
            acc = self.tape.add(acc, h);
        }
        Ok(acc)
    }

    /// Fourth derivative along `x_j`: the second derivative applied twice.
    pub fn d4(&mut self, u: Var, j: usize) -> Result<Var> {
        let s = self.stencils(2)?;
        let h = s.hess_var(self.tape, u, j, j);
        Ok(s.hess_var(self.tape, h, j, j))
    }
}

/// The differential operator of a problem.
///
/// Stationary problems implement [`ResidualSpec::residual`], time-dependent
/// ones [`ResidualSpec::rhs`] for `∂u/∂t = F(u)`.
pub trait ResidualSpec: Send + Sync {
    /// Derivative orders read by `residual`/`rhs`/`boundary_residual`.
    fn required_orders(&self) -> &'static [u8];

    fn channels(&self) -> usize {
        1
    }

    fn residual(&self, _ctx: &mut ResidualCtx, _u: Var) -> Result<Var> {
        Err(Error::Config("problem has no stationary residual".into()))
    }

    fn rhs(&self, _ctx: &mut ResidualCtx, _u: Var) -> Result<Var> {
        Err(Error::Config("problem is not time-dependent".into()))
    }

    /// Extra boundary residual rows (e.g. traction-free conditions), folded
    /// into the boundary loss.
    fn boundary_residual(&self, _ctx: &mut ResidualCtx, _u: Var) -> Result<Option<Var>> {
        Ok(None)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossReport {
    pub pde_loss: f64,
    pub bc_loss: f64,
    pub total: f64,
    pub beta: f64,
}

impl LossReport {
    pub fn new(pde_loss: f64, bc_loss: f64, beta: f64) -> Self {
        Self {
            pde_loss,
            bc_loss,
            total: pde_loss + beta * bc_loss,
            beta,
        }
    }

    /// Mean of per-sample reports.
    pub fn mean(reports: &[LossReport], beta: f64) -> Self {
        let n = reports.len().max(1) as f64;
        let pde = reports.iter().map(|r| r.pde_loss).sum::<f64>() / n;
        let bc = reports.iter().map(|r| r.bc_loss).sum::<f64>() / n;
        Self::new(pde, bc, beta)
    }

    /// `sqrt(pde + bc)`, the physics-residual RMS used for monitoring.
    pub fn residual_rms(&self) -> f64 {
        (self.pde_loss + self.bc_loss).sqrt()
    }
}

/// What the model sees for one sample.
#[derive(Clone, Copy, Debug)]
pub enum ModelInput<'a> {
    Nodes(&'a Mat),
    /// Boundary values and coordinates for the encoder lifts.
    Boundary(&'a Mat, &'a Mat),
}

/// Anything that maps a sample to a node field on a tape.
pub trait FieldModel: Sync {
    fn params(&self) -> &ParamStore;

    /// Evaluate on node inputs already on the tape (gradients flow into them).
    fn eval_nodes<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, inputs: Var) -> Result<Var>;

    fn eval<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, input: ModelInput<'a>) -> Result<Var> {
        match input {
            ModelInput::Nodes(a) => {
                let a = tape.constant_ref(a);
                self.eval_nodes(tape, graph, a)
            }
            ModelInput::Boundary(..) => Err(Error::Config("model does not take boundary inputs".into())),
        }
    }
}

impl FieldModel for Operator {
    fn params(&self) -> &ParamStore {
        &self.params
    }

    fn eval_nodes<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, inputs: Var) -> Result<Var> {
        if self.config.lift != LiftKind::Linear {
            return Err(Error::Config("encoder operators take boundary inputs".into()));
        }
        self.forward(tape, graph, Some(inputs), None)
    }

    fn eval<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, input: ModelInput<'a>) -> Result<Var> {
        match (input, self.config.lift) {
            (ModelInput::Nodes(a), LiftKind::Linear) => {
                let a = tape.constant_ref(a);
                self.forward(tape, graph, Some(a), None)
            }
            (ModelInput::Boundary(v, x), LiftKind::Encoder | LiftKind::EncoderGeo) => {
                let v = tape.constant_ref(v);
                let x = tape.constant_ref(x);
                self.forward(tape, graph, None, Some((v, x)))
            }
            _ => Err(Error::Config("model input does not match the operator lift".into())),
        }
    }
}

/// A frozen field that ignores its input, e.g. an analytic solution.
pub struct FixedField {
    pub value: Mat,
    empty: ParamStore,
}

impl FixedField {
    pub fn new(value: Mat) -> Self {
        Self {
            value,
            empty: ParamStore::new(),
        }
    }
}

impl FieldModel for FixedField {
    fn params(&self) -> &ParamStore {
        &self.empty
    }

    fn eval_nodes<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, _inputs: Var) -> Result<Var> {
        if self.value.nrows() != graph.len() {
            return Err(Error::ShapeMismatch(format!(
                "fixed field has {} rows, graph has {} nodes",
                self.value.nrows(),
                graph.len()
            )));
        }
        Ok(tape.constant_ref(&self.value))
    }

    fn eval<'a>(&'a self, tape: &mut Tape<'a>, graph: &'a SpatialGraph, _input: ModelInput<'a>) -> Result<Var> {
        let dummy = tape.constant(Array2::zeros((0, 0)));
        self.eval_nodes(tape, graph, dummy)
    }
}

/// Dirichlet data: node indices and target values (`|nodes| × channels`).
#[derive(Clone, Debug)]
pub struct Dirichlet {
    pub nodes: Arc<Vec<usize>>,
    pub values: Mat,
}

/// One stationary training sample.
#[derive(Clone, Copy)]
pub struct StationarySample<'a> {
    pub graph: &'a SpatialGraph,
    pub stencils: Option<&'a StencilSet>,
    pub input: ModelInput<'a>,
    pub problem_inputs: Option<&'a Mat>,
    /// Nodes where the PDE residual is enforced.
    pub pde_nodes: &'a Arc<Vec<usize>>,
    pub dirichlet: Option<&'a Dirichlet>,
}

fn check_derivs(spec: &dyn ResidualSpec, stencils: Option<&StencilSet>) -> Result<()> {
    if stencils.is_none() {
        if let Some(&o) = spec.required_orders().iter().find(|&&o| o > 0) {
            return Err(Error::MissingDerivativeOrder(o));
        }
    }
    Ok(())
}

fn dirichlet_term(tape: &mut Tape, u: Var, bc: &Dirichlet) -> Var {
    let ub = tape.gather_rows(u, bc.nodes.clone());
    let g = tape.constant(bc.values.clone());
    let d = tape.sub(ub, g);
    tape.mean_square(d)
}

/// Boundary loss: Dirichlet mismatch plus any extra boundary residual.
fn boundary_loss(
    ctx: &mut ResidualCtx,
    spec: &dyn ResidualSpec,
    u: Var,
    bc: Option<&Dirichlet>,
) -> Result<Option<Var>> {
    let mut acc = bc.map(|bc| dirichlet_term(ctx.tape, u, bc));
    if let Some(extra) = spec.boundary_residual(ctx, u)? {
        let ms = ctx.tape.mean_square(extra);
        acc = Some(match acc {
            Some(a) => ctx.tape.add(a, ms),
            None => ms,
        });
    }
    Ok(acc)
}

fn stationary_one(
    model: &dyn FieldModel,
    spec: &dyn ResidualSpec,
    s: &StationarySample,
    beta: f64,
    weight: f64,
    want_grad: bool,
) -> Result<(LossReport, Option<GradBuffer>)> {
    check_derivs(spec, s.stencils)?;
    let mut tape = Tape::new(model.params());
    let u = model.eval(&mut tape, s.graph, s.input)?;
    let mut ctx = ResidualCtx::new(
        &mut tape,
        s.graph,
        s.stencils,
        s.problem_inputs,
        0.0,
        spec.required_orders(),
    );
    let r = spec.residual(&mut ctx, u)?;
    let bc = boundary_loss(&mut ctx, spec, u, s.dirichlet)?;
    let ri = tape.gather_rows(r, s.pde_nodes.clone());
    let pde = tape.mean_square(ri);
    let total = match bc {
        Some(b) => {
            let wb = tape.scale(b, beta);
            tape.add(pde, wb)
        }
        None => pde,
    };
    let report = LossReport::new(tape.scalar(pde), bc.map_or(0.0, |b| tape.scalar(b)), beta);
    if !report.total.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            context: format!("stationary loss pde={} bc={}", report.pde_loss, report.bc_loss),
        });
    }
    let grads = want_grad.then(|| {
        let mut buf = GradBuffer::zeros_like(model.params());
        buf.add(tape.backward(total).params(), weight);
        buf
    });
    Ok((report, grads))
}

/// Batch-mean stationary loss without gradients.
pub fn stationary_loss(
    model: &dyn FieldModel,
    spec: &dyn ResidualSpec,
    samples: &[StationarySample],
    beta: f64,
) -> Result<LossReport> {
    let reports = samples
        .par_iter()
        .map(|s| stationary_one(model, spec, s, beta, 0.0, false).map(|r| r.0))
        .collect::<Result<Vec<_>>>()?;
    Ok(LossReport::mean(&reports, beta))
}

/// Batch-mean stationary loss and its parameter gradient.
pub fn stationary_loss_grad(
    model: &dyn FieldModel,
    spec: &dyn ResidualSpec,
    samples: &[StationarySample],
    beta: f64,
) -> Result<(LossReport, GradBuffer)> {
    let w = 1.0 / samples.len().max(1) as f64;
    let parts = samples
        .par_iter()
        .map(|s| stationary_one(model, spec, s, beta, w, true))
        .collect::<Result<Vec<_>>>()?;
    let mut buf = GradBuffer::zeros_like(model.params());
    let mut reports = Vec::with_capacity(parts.len());
    for (r, g) in parts {
        reports.push(r);
        buf.merge(&g.expect("gradients requested"));
    }
    Ok((LossReport::mean(&reports, beta), buf))
}

/// `u_next − u_curr − (dt/2)(F_next + F_curr)`.
pub fn crank_nicolson_residual(u_next: &Mat, u_curr: &Mat, f_next: &Mat, f_curr: &Mat, dt: f64) -> Result<Mat> {
    let shape = u_next.dim();
    for (name, m) in [("u_curr", u_curr), ("F_next", f_next), ("F_curr", f_curr)] {
        if m.dim() != shape {
            return Err(Error::ShapeMismatch(format!(
                "{name} is {:?}, u_next is {shape:?}",
                m.dim()
            )));
        }
    }
    Ok(u_next - u_curr - &((f_next + f_curr) * (0.5 * dt)))
}

/// History indices forming the next input window, most recent first.
///
/// With history `[u_0, …, u_n]` this is `[n, n−1, …]` truncated to `k`
/// entries, padded with `0` (the initial state) when `n + 1 < k`.
pub fn window_indices(history_len: usize, k: usize) -> Vec<usize> {
    assert!(history_len > 0 && k > 0);
    (0..k).map(|i| history_len.saturating_sub(1 + i)).collect()
}

/// Column-stacked input window `[u_n ‖ u_{n−1} ‖ …]` of width `k·c`.
pub fn build_window(history: &[Mat], k: usize) -> Mat {
    let views: Vec<_> = window_indices(history.len(), k)
        .into_iter()
        .map(|i| history[i].view())
        .collect();
    concatenate(Axis(1), &views).expect("history states share a shape")
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RolloutParams {
    /// Window length.
    pub k: usize,
    pub steps: usize,
    pub dt: f64,
    pub beta: f64,
    /// Backpropagate through the whole rollout instead of only the newest
    /// prediction at each step.
    pub full_backprop: bool,
}

/// One trajectory to roll out.
#[derive(Clone, Copy)]
pub struct RolloutSample<'a> {
    pub graph: &'a SpatialGraph,
    pub stencils: Option<&'a StencilSet>,
    /// Given leading states `[u_0, …]`; the rollout continues from the last.
    pub history: &'a [Mat],
    pub problem_inputs: Option<&'a Mat>,
    pub pde_nodes: &'a Arc<Vec<usize>>,
    pub dirichlet: Option<&'a Dirichlet>,
}

/// A rollout's loss, optional gradient and predicted states (history
/// included).
pub struct RolloutOutcome {
    pub report: LossReport,
    pub grads: Option<GradBuffer>,
    pub trajectories: Vec<Vec<Mat>>,
}

fn rhs_value(spec: &dyn ResidualSpec, s: &RolloutSample, params: &ParamStore, u: &Mat, time: f64) -> Result<Mat> {
    let mut tape = Tape::new(params);
    let uv = tape.constant(u.clone());
    let mut ctx = ResidualCtx::new(
        &mut tape,
        s.graph,
        s.stencils,
        s.problem_inputs,
        time,
        spec.required_orders(),
    );
    let f = spec.rhs(&mut ctx, uv)?;
    Ok(tape.value(f).clone())
}

fn non_finite(step: usize, what: &str, v: f64) -> Error {
    Error::NonFiniteLoss {
        step,
        context: format!("{what} = {v}"),
    }
}

/// Per-step pieces shared by both backprop modes: the CN residual's mean
/// square and the boundary term, given the new state on the tape.
#[allow(clippy::too_many_arguments)]
fn step_terms<'a>(
    tape: &mut Tape<'a>,
    spec: &dyn ResidualSpec,
    s: &RolloutSample<'a>,
    u_next: Var,
    u_curr: Var,
    f_curr: Var,
    dt: f64,
    time: f64,
) -> Result<(Var, Option<Var>, Var)> {
    let mut ctx = ResidualCtx::new(
        tape,
        s.graph,
        s.stencils,
        s.problem_inputs,
        time,
        spec.required_orders(),
    );
    let f_next = spec.rhs(&mut ctx, u_next)?;
    let bc = boundary_loss(&mut ctx, spec, u_next, s.dirichlet)?;
    let du = tape.sub(u_next, u_curr);
    let fs = tape.add(f_next, f_curr);
    let fs = tape.scale(fs, 0.5 * dt);
    let r = tape.sub(du, fs);
    let ri = tape.gather_rows(r, s.pde_nodes.clone());
    Ok((tape.mean_square(ri), bc, f_next))
}

fn rollout_one(
    model: &dyn FieldModel,
    spec: &dyn ResidualSpec,
    s: &RolloutSample,
    p: &RolloutParams,
    weight: f64,
    want_grad: bool,
) -> Result<(LossReport, Option<GradBuffer>, Vec<Mat>)> {
    check_derivs(spec, s.stencils)?;
    if s.history.is_empty() || p.k == 0 || p.steps == 0 {
        return Err(Error::Config(
            "rollout needs k ≥ 1, steps ≥ 1 and an initial state".into(),
        ));
    }
    let params = model.params();
    let mut states: Vec<Mat> = s.history.to_vec();
    let t0 = (states.len() - 1) as f64 * p.dt;
    let (mut pde_sum, mut bc_sum) = (0.0, 0.0);
    let step_w = weight / p.steps as f64;
    let mut buf = want_grad.then(|| GradBuffer::zeros_like(params));

    if p.full_backprop {
        let mut tape = Tape::new(params);
        let mut vars: Vec<Var> = states.iter().map(|m| tape.constant(m.clone())).collect();
        let mut f_prev: Option<Var> = None;
        let mut total: Option<Var> = None;
        for n in 0..p.steps {
            let idx = window_indices(vars.len(), p.k);
            let parts: Vec<Var> = idx.iter().map(|&i| vars[i]).collect();
            let window = tape.concat(&parts);
            let time = t0 + n as f64 * p.dt;
            let u_curr = *vars.last().expect("non-empty history");
            let f_curr = match f_prev {
                Some(f) => f,
                None => {
                    let mut ctx = ResidualCtx::new(
                        &mut tape,
                        s.graph,
                        s.stencils,
                        s.problem_inputs,
                        time,
                        spec.required_orders(),
                    );
                    spec.rhs(&mut ctx, u_curr)?
                }
            };
            let u_next = model.eval_nodes(&mut tape, s.graph, window)?;
            let (pde, bc, f_next) = step_terms(&mut tape, spec, s, u_next, u_curr, f_curr, p.dt, time + p.dt)?;
            let pv = tape.scalar(pde);
            let bv = bc.map_or(0.0, |b| tape.scalar(b));
            if !pv.is_finite() || !bv.is_finite() {
                return Err(non_finite(n, "rollout residual", pv + bv));
            }
            pde_sum += pv;
            bc_sum += bv;
            let step_total = match bc {
                Some(b) => {
                    let wb = tape.scale(b, p.beta);
                    tape.add(pde, wb)
                }
                None => pde,
            };
            total = Some(match total {
                Some(t) => tape.add(t, step_total),
                None => step_total,
            });
            states.push(tape.value(u_next).clone());
            vars.push(u_next);
            f_prev = Some(f_next);
        }
        if let Some(b) = buf.as_mut() {
            b.add(tape.backward(total.expect("steps ≥ 1")).params(), step_w);
        }
    } else {
        let mut f_curr_val = rhs_value(spec, s, params, states.last().expect("non-empty"), t0)?;
        for n in 0..p.steps {
            let window = build_window(&states, p.k);
            let time = t0 + n as f64 * p.dt;
            let mut tape = Tape::new(params);
            let u_next = model.eval(&mut tape, s.graph, ModelInput::Nodes(&window))?;
            let u_curr = tape.constant_ref(states.last().expect("non-empty"));
            let f_curr = tape.constant(f_curr_val);
            let (pde, bc, f_next) = step_terms(&mut tape, spec, s, u_next, u_curr, f_curr, p.dt, time + p.dt)?;
            let pv = tape.scalar(pde);
            let bv = bc.map_or(0.0, |b| tape.scalar(b));
            if !pv.is_finite() || !bv.is_finite() {
                return Err(non_finite(n, "rollout residual", pv + bv));
            }
            pde_sum += pv;
            bc_sum += bv;
            if let Some(b) = buf.as_mut() {
                let step_total = match bc {
                    Some(bcv) => {
                        let wb = tape.scale(bcv, p.beta);
                        tape.add(pde, wb)
                    }
                    None => pde,
                };
                b.add(tape.backward(step_total).params(), step_w);
            }
            f_curr_val = tape.value(f_next).clone();
            let next = tape.value(u_next).clone();
            drop(tape);
            states.push(next);
        }
    }
    let steps = p.steps as f64;
    let report = LossReport::new(pde_sum / steps, bc_sum / steps, p.beta);
    Ok((report, buf, states))
}

/// Batch rollout loss (mean over samples, steps and nodes) with optional
/// gradients and the predicted trajectories.
pub fn rollout_loss(
    model: &dyn FieldModel,
    spec: &dyn ResidualSpec,
    samples: &[RolloutSample],
    params: &RolloutParams,
    want_grad: bool,
) -> Result<RolloutOutcome> {
    let w = 1.0 / samples.len().max(1) as f64;
    let parts = samples
        .par_iter()
        .map(|s| rollout_one(model, spec, s, params, w, want_grad))
        .collect::<Result<Vec<_>>>()?;
    let mut reports = Vec::with_capacity(parts.len());
    let mut trajectories = Vec::with_capacity(parts.len());
    let mut grads = want_grad.then(|| GradBuffer::zeros_like(model.params()));
    for (r, g, t) in parts {
        reports.push(r);
        trajectories.push(t);
        if let (Some(acc), Some(g)) = (grads.as_mut(), g) {
            acc.merge(&g);
        }
    }
    Ok(RolloutOutcome {
        report: LossReport::mean(&reports, params.beta),
        grads,
        trajectories,
    })
}

/// Inference-only rollout: `steps` new states appended to `history`.
pub fn rollout_predict(
    model: &dyn FieldModel,
    graph: &SpatialGraph,
    history: &[Mat],
    k: usize,
    steps: usize,
) -> Result<Vec<Mat>> {
    let mut states = history.to_vec();
    for n in 0..steps {
        let window = build_window(&states, k);
        let mut tape = Tape::new(model.params());
        let u = model.eval(&mut tape, graph, ModelInput::Nodes(&window))?;
        let v = tape.value(u).clone();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(non_finite(n, "rollout state", f64::NAN));
        }
        states.push(v);
    }
    Ok(states)
}

#[cfg(test)]
mod tests;
