//! The training loop.

use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::autodiff::{GradBuffer, Mat, ParamStore, Tape};
use crate::dataset::{split_seeds, Dataset};
use crate::error::{Error, Result};
use crate::graph::GraphParams;
use crate::loss::{
    rollout_loss, stationary_loss, stationary_loss_grad, LossReport, ResidualCtx, ResidualSpec, RolloutParams,
};
use crate::operator::{load_checkpoint, save_checkpoint, Normalizer, Operator};
use crate::optim::Adam;
use crate::problems::{Instance, PreparedInput, Problem};

use super::config::TrainConfig;
use super::evaluate::{evaluate_prepared, EvalReport};
use super::metrics::{MetricKind, MetricsRow, MetricsWriter};
use super::prepare::{prepare, PreparedSample};

/// Run settings stored in every checkpoint so evaluation can rebuild the
/// same graphs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunExtra {
    pub config: TrainConfig,
    pub graph_params: GraphParams,
}

impl RunExtra {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("run settings serialize")
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        serde_json::from_value(v.clone()).map_err(|e| Error::SchemaMismatch(format!("checkpoint run settings: {e}")))
    }
}

/// Prepared train and test sets of one run.
pub struct RunData {
    pub problem: Problem,
    pub train: Vec<PreparedSample>,
    pub test: Vec<PreparedSample>,
    pub graph_params: GraphParams,
}

fn read_split(path: &Path, cfg: &TrainConfig) -> Result<Dataset> {
    let d = Dataset::read(path)?;
    if d.problem.name != cfg.problem {
        return Err(Error::Config(format!(
            "{} holds {} instances, config asks for {}",
            path.display(),
            d.problem.name,
            cfg.problem
        )));
    }
    Ok(d)
}

/// Train and test instances: read from the configured files, or sampled
/// from disjoint seed streams.
pub fn load_instances(cfg: &TrainConfig) -> Result<(Problem, Vec<Instance>, Vec<Instance>)> {
    let mut problem = cfg.resolved_problem()?;
    let train = match &cfg.train_data {
        Some(p) => {
            let d = read_split(p, cfg)?;
            problem = d.problem;
            d.instances
        }
        None => Dataset::generate(&problem, &split_seeds(cfg.seed, cfg.n_train, 0).0)?.instances,
    };
    let test = match &cfg.test_data {
        Some(p) => read_split(p, cfg)?.instances,
        None if cfg.n_test == 0 => Vec::new(),
        None => Dataset::generate(&problem, &split_seeds(cfg.seed, 0, cfg.n_test).1)?.instances,
    };
    Ok((problem, train, test))
}

/// Graph parameters for `instances`; modes are capped by the smallest cloud.
pub fn graph_params(cfg: &TrainConfig, instances: &[&Instance], modes: Option<usize>) -> Result<GraphParams> {
    let first = instances
        .first()
        .ok_or_else(|| Error::Config("no instances to train on".into()))?;
    let mut gp = GraphParams::for_dim(first.cloud.dim());
    let min_n = instances.iter().map(|i| i.len()).min().unwrap_or(0);
    gp.k = cfg.graph_k.unwrap_or(gp.k);
    gp.n_emb = cfg.operator.embedding_dim;
    gp.seed = cfg.seed;
    gp.modes = Some(modes.unwrap_or(cfg.operator.modes).min(min_n).max(1));
    Ok(gp)
}

/// Load or sample the data of a run and build its graphs. `modes` pins the
/// spectral truncation (e.g. to a checkpoint's).
pub fn prepare_run(cfg: &TrainConfig, modes: Option<usize>) -> Result<RunData> {
    let (problem, train, test) = load_instances(cfg)?;
    if train.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let all: Vec<&Instance> = train.iter().chain(&test).collect();
    let gp = graph_params(cfg, &all, modes)?;
    let cache = cfg.graph_cache.as_ref().map(|p| super::config::resolve_output(p));
    let train = prepare(&problem, cfg.geometry, train, &gp, &cfg.stencil, cache.as_deref())?;
    let test = prepare(&problem, cfg.geometry, test, &gp, &cfg.stencil, cache.as_deref())?;
    Ok(RunData {
        problem,
        train,
        test,
        graph_params: gp,
    })
}

fn replicate(v: &Array1<f64>, times: usize) -> Array1<f64> {
    Array1::from_iter((0..times).flat_map(|_| v.iter().copied()))
}

/// `Δt · F(u)` with the sample's stencils.
fn increment(spec: &dyn ResidualSpec, s: &PreparedSample, u: &Mat, dt: f64) -> Result<Mat> {
    let empty = ParamStore::new();
    let mut tape = Tape::new(&empty);
    let uv = tape.constant(u.clone());
    let mut ctx = ResidualCtx::new(
        &mut tape,
        s.graph(),
        Some(&s.disc.stencils),
        s.instance.input.as_ref(),
        0.0,
        spec.required_orders(),
    );
    let f = spec.rhs(&mut ctx, uv)?;
    Ok(tape.value(f) * dt)
}

/// Input, coordinate and output scalings from the training set.
///
/// Outputs of stationary problems are scaled by the Dirichlet data (unit
/// scale when it is constant). Rollouts predict increments, scaled by the
/// RMS of `Δt·F(u)` over the last given states.
pub fn fit_normalizer(problem: &Problem, op_in: usize, samples: &[PreparedSample]) -> Result<Normalizer> {
    let coords: Vec<&Mat> = samples.iter().map(|s| s.graph().coords()).collect();
    let (coord_mean, coord_std) = Normalizer::column_stats(coords);
    let out_ch = problem.out_channels();
    let mut norm = Normalizer::identity(op_in, coord_mean.len(), out_ch);
    norm.coord_mean = coord_mean;
    norm.coord_std = coord_std;
    match problem.time {
        Some(tc) => {
            let states: Vec<&Mat> = samples.iter().flat_map(|s| &s.instance.history).collect();
            let (m, sd) = Normalizer::column_stats(states);
            norm.in_mean = replicate(&m, tc.window);
            norm.in_std = replicate(&sd, tc.window);
            let spec = problem.residual();
            let mut sq = 0.0;
            let mut count = 0usize;
            for s in samples {
                let u = s.instance.history.last().expect("rollouts have a history");
                let d = increment(spec.as_ref(), s, u, tc.dt)?;
                sq += d.mapv(|v| v * v).sum();
                count += d.len();
            }
            let rms = (sq / count.max(1) as f64).sqrt();
            norm.out_std = Array1::from_elem(out_ch, if rms.is_finite() && rms > 1e-12 { rms } else { 1.0 });
        }
        None => {
            let inputs: Vec<&Mat> = samples
                .iter()
                .filter_map(|s| match &s.input {
                    Some(PreparedInput::Nodes(a)) => Some(a),
                    Some(PreparedInput::Boundary { values, .. }) => Some(values),
                    None => None,
                })
                .collect();
            let (m, sd) = Normalizer::column_stats(inputs);
            if m.len() == op_in {
                norm.in_mean = m;
                norm.in_std = sd.mapv(|v| if v > 1e-8 { v } else { 1.0 });
            }
            let bcs: Vec<&Mat> = samples
                .iter()
                .filter_map(|s| s.dirichlet.as_ref().map(|d| &d.values))
                .collect();
            let (m, sd) = Normalizer::column_stats(bcs);
            if m.len() == out_ch {
                for c in 0..out_ch {
                    if sd[c] > 1e-8 {
                        norm.out_mean[c] = m[c];
                        norm.out_std[c] = sd[c];
                    }
                }
            }
        }
    }
    Ok(norm)
}

/// A freshly initialized operator with scalings fitted to `data.train`.
pub fn build_operator(cfg: &TrainConfig, data: &RunData) -> Result<Operator> {
    let modes = data.graph_params.modes.expect("modes resolved");
    let dim = data.train[0].graph().dim();
    let ocfg = cfg.operator_config(&data.problem, modes, dim)?;
    let in_ch = ocfg.in_channels;
    let mut op = Operator::new(ocfg)?;
    op.normalizer = fit_normalizer(&data.problem, in_ch, &data.train)?;
    Ok(op)
}

fn rollout_params(problem: &Problem, cfg: &TrainConfig) -> RolloutParams {
    let tc = problem.time.expect("time-dependent problem");
    RolloutParams {
        k: tc.window,
        steps: tc.train_steps,
        dt: tc.dt,
        beta: cfg.beta(problem),
        full_backprop: cfg.full_backprop,
    }
}

/// Physics loss of `op` over `samples` (training horizon for rollouts).
pub fn physics_report(
    op: &Operator,
    problem: &Problem,
    cfg: &TrainConfig,
    samples: &[PreparedSample],
) -> Result<LossReport> {
    let spec = problem.residual();
    let beta = cfg.beta(problem);
    if problem.is_time_dependent() {
        let rs: Vec<_> = samples.iter().map(|s| s.rollout()).collect();
        Ok(rollout_loss(op, spec.as_ref(), &rs, &rollout_params(problem, cfg), false)?.report)
    } else {
        let ss = samples.iter().map(|s| s.stationary()).collect::<Result<Vec<_>>>()?;
        stationary_loss(op, spec.as_ref(), &ss, beta)
    }
}

fn batch_step(
    op: &Operator,
    problem: &Problem,
    cfg: &TrainConfig,
    batch: &[&PreparedSample],
) -> Result<(LossReport, GradBuffer)> {
    let spec = problem.residual();
    if problem.is_time_dependent() {
        let rs: Vec<_> = batch.iter().map(|s| s.rollout()).collect();
        let out = rollout_loss(op, spec.as_ref(), &rs, &rollout_params(problem, cfg), true)?;
        Ok((out.report, out.grads.expect("gradients requested")))
    } else {
        let ss = batch.iter().map(|s| s.stationary()).collect::<Result<Vec<_>>>()?;
        stationary_loss_grad(op, spec.as_ref(), &ss, cfg.beta(problem))
    }
}

/// Sample order of one epoch; depends only on the seed and the epoch so a
/// resumed run sees the same batches.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1 + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn field_summary(m: &Mat) -> serde_json::Value {
    let (lo, hi) = m
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let finite = m.iter().all(|v| v.is_finite());
    json!({"rows": m.nrows(), "cols": m.ncols(), "min": lo, "max": hi, "finite": finite})
}

fn write_diagnostics(
    dir: &Path,
    op: &Operator,
    epoch: usize,
    batch: &[&PreparedSample],
    lr: f64,
    err: &Error,
) -> PathBuf {
    let norms: serde_json::Map<String, serde_json::Value> = op
        .params
        .entries()
        .iter()
        .map(|e| (e.name.clone(), json!(e.value.mapv(|v| v * v).sum().sqrt())))
        .collect();
    let inputs: Vec<_> = batch
        .iter()
        .map(|s| {
            let field = match &s.input {
                Some(PreparedInput::Nodes(a)) => Some(field_summary(a)),
                Some(PreparedInput::Boundary { values, .. }) => Some(field_summary(values)),
                None => s.instance.history.last().map(field_summary),
            };
            json!({"seed": s.instance.seed, "input": field})
        })
        .collect();
    let diag = json!({
        "error": err.to_string(),
        "epoch": epoch,
        "lr": lr,
        "batch": inputs,
        "param_norms": norms,
    });
    let path = dir.join("diagnostics.json");
    if let Err(e) = std::fs::write(&path, serde_json::to_string_pretty(&diag).expect("json")) {
        log::error!("could not write {}: {e}", path.display());
    }
    path
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub output_dir: PathBuf,
    /// Checkpoint written after the last epoch.
    pub checkpoint: PathBuf,
    pub metrics: PathBuf,
    pub rows: Vec<MetricsRow>,
    /// Training-set physics loss before the first update of this run.
    pub initial: LossReport,
    /// Training-set physics loss after the last epoch.
    pub final_report: LossReport,
    /// Last test-set evaluation, if there is a test set.
    pub eval: Option<EvalReport>,
    pub operator: Operator,
}

/// Run a full training job: data, graphs, optimization, metrics,
/// checkpoints and the final evaluation.
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let resumed = match &cfg.resume {
        Some(p) => Some(load_checkpoint(p)?),
        None => None,
    };
    let data = prepare_run(cfg, resumed.as_ref().map(|c| c.operator.config.modes))?;
    let (op, adam, start) = match resumed {
        Some(c) => {
            let adam = c.adam.unwrap_or_else(|| Adam::new(&c.operator.params));
            (c.operator, adam, c.epoch)
        }
        None => {
            let op = build_operator(cfg, &data)?;
            let adam = Adam::new(&op.params);
            (op, adam, 0)
        }
    };
    train_prepared(cfg, &data, op, adam, start)
}

/// Training on already prepared data, from epoch `start`.
pub fn train_prepared(
    cfg: &TrainConfig,
    data: &RunData,
    mut op: Operator,
    mut adam: Adam,
    start: usize,
) -> Result<TrainOutcome> {
    let problem = &data.problem;
    let out = cfg.resolved_output_dir();
    let ckpt_dir = out.join("checkpoints");
    std::fs::create_dir_all(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;

    let epochs = cfg.epochs(problem);
    let bs = cfg.batch_size(problem);
    let extra = RunExtra {
        config: cfg.clone(),
        graph_params: data.graph_params.clone(),
    };
    let has_truth =
        problem.has_reference() || (!data.test.is_empty() && data.test.iter().all(|s| s.instance.reference.is_some()));
    let metric = if has_truth {
        MetricKind::Nmse
    } else {
        MetricKind::ResidualRms
    };
    let metrics_path = out.join("metrics.csv");
    let mut writer = MetricsWriter::open(&metrics_path, problem.name, metric, start > 0)?;

    let initial = physics_report(&op, problem, cfg, &data.train)?;
    log::info!("{}: initial residual rms {:.4e}", problem.name, initial.residual_rms());
    let clock = Instant::now();
    let mut rows = Vec::new();
    let mut eval = None;
    let mut last_ckpt = None;
    for epoch in start..epochs {
        let lr = cfg.optimizer.lr(epoch);
        let order = epoch_order(data.train.len(), cfg.seed, epoch);
        let (mut pde, mut bc, mut total, mut count) = (0.0, 0.0, 0.0, 0usize);
        for (b, chunk) in order.chunks(bs).enumerate() {
            let batch: Vec<&PreparedSample> = chunk.iter().map(|&i| &data.train[i]).collect();
            let step = batch_step(&op, problem, cfg, &batch).and_then(|(r, g)| {
                if g.is_finite() {
                    Ok((r, g))
                } else {
                    Err(Error::NonFiniteLoss {
                        step: 0,
                        context: "non-finite gradient".into(),
                    })
                }
            });
            let (report, grads) = match step {
                Ok(v) => v,
                Err(Error::NonFiniteLoss { context, .. }) => {
                    let step = epoch * order.len().div_ceil(bs) + b;
                    let err = Error::NonFiniteLoss {
                        step,
                        context: context.clone(),
                    };
                    let path = write_diagnostics(&out, &op, epoch, &batch, lr, &err);
                    return Err(Error::NonFiniteLoss {
                        step,
                        context: format!("{context}; diagnostics in {}", path.display()),
                    });
                }
                Err(e) => return Err(e),
            };
            adam.update(&mut op.params, &grads, lr);
            let w = batch.len();
            pde += report.pde_loss * w as f64;
            bc += report.bc_loss * w as f64;
            total += report.total * w as f64;
            count += w;
        }
        let n = count as f64;
        let done = epoch + 1;
        let eval_metric = if !data.test.is_empty() && (done % cfg.eval_every == 0 || done == epochs) {
            let r = evaluate_prepared(&op, problem, &data.test, cfg.beta(problem))?;
            let v = r.value;
            eval = Some(r);
            Some(v)
        } else {
            None
        };
        let row = MetricsRow {
            epoch: done,
            total_loss: total / n,
            pde_loss: pde / n,
            bc_loss: bc / n,
            eval_metric,
            lr,
            wall_time_s: clock.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {done}/{epochs} loss {:.4e} pde {:.4e} bc {:.4e}{}",
            row.total_loss,
            row.pde_loss,
            row.bc_loss,
            eval_metric.map_or(String::new(), |v| format!(" {} {v:.4e}", metric.as_str()))
        );
        writer.append(&row)?;
        rows.push(row);
        if done % cfg.checkpoint_every == 0 || done == epochs {
            let path = ckpt_dir.join(format!("epoch_{done:05}.pgno"));
            save_checkpoint(&path, &op, Some(&adam), done, extra.to_json())?;
            last_ckpt = Some(path);
        }
    }
    let checkpoint = match last_ckpt {
        Some(p) => p,
        None => {
            let path = ckpt_dir.join(format!("epoch_{start:05}.pgno"));
            save_checkpoint(&path, &op, Some(&adam), start, extra.to_json())?;
            path
        }
    };
    let final_report = physics_report(&op, problem, cfg, &data.train)?;
    log::info!(
        "{}: final residual rms {:.4e}",
        problem.name,
        final_report.residual_rms()
    );
    Ok(TrainOutcome {
        output_dir: out,
        checkpoint,
        metrics: metrics_path,
        rows,
        initial,
        final_report,
        eval,
        operator: op,
    })
}
