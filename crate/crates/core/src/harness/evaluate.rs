//! Test-set scoring, prediction files and external references.

use std::path::{Path, PathBuf};

use ndarray::{Array3, Axis};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::autodiff::{Mat, Tape};
use crate::container::Container;
use crate::dataset::{load_external_reference, Dataset, ExternalReference};
use crate::error::{Error, Result};
use crate::loss::{rollout_loss, rollout_predict, stationary_loss, FieldModel, LossReport, RolloutParams};
use crate::operator::{load_checkpoint, Operator};
use crate::problems::{PreparedInput, Problem};

use super::config::TrainConfig;
use super::metrics::{full_scale_target, MetricKind};
use super::plot::plot_predictions;
use super::prepare::{prepare, PreparedSample};
use super::train::RunExtra;

pub const PREDICTIONS_KIND: &str = "predictions";

/// One evaluated sample. Stationary problems have a single state; rollouts
/// hold the predicted states after the given history.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePrediction {
    pub seed: u64,
    pub coords: Mat,
    /// Field shown in the input row of the plots.
    pub input: Option<Mat>,
    pub truth: Option<Vec<Mat>>,
    pub prediction: Vec<Mat>,
    pub error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub metric: MetricKind,
    pub value: f64,
    pub per_sample: Vec<f64>,
    pub predictions: Vec<SamplePrediction>,
}

/// `Σ‖pred − true‖² / Σ‖true‖²` over the states of one sample.
pub fn relative_sq_error(pred: &[Mat], truth: &[Mat]) -> Result<f64> {
    if pred.len() != truth.len() || pred.iter().zip(truth).any(|(p, t)| p.dim() != t.dim()) {
        return Err(Error::ShapeMismatch("prediction and reference shapes differ".into()));
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, t) in pred.iter().zip(truth) {
        num += (p - t).mapv(|v| v * v).sum();
        den += t.mapv(|v| v * v).sum();
    }
    if den == 0.0 {
        return Err(Error::DegenerateInput("reference field is identically zero".into()));
    }
    Ok(num / den)
}

/// Mean over samples of the relative squared error.
pub fn nmse(pairs: &[(Vec<Mat>, Vec<Mat>)]) -> Result<f64> {
    let errs = pairs
        .iter()
        .map(|(p, t)| relative_sq_error(p, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(errs.iter().sum::<f64>() / errs.len().max(1) as f64)
}

fn predict_stationary(op: &Operator, s: &PreparedSample) -> Result<Mat> {
    let mut tape = Tape::new(&op.params);
    let u = op.eval(&mut tape, s.graph(), s.model_input()?)?;
    Ok(tape.value(u).clone())
}

fn plot_input(s: &PreparedSample) -> Option<Mat> {
    match &s.input {
        Some(PreparedInput::Nodes(a)) => Some(a.clone()),
        Some(PreparedInput::Boundary { .. }) => s.instance.boundary_field(),
        None => s.instance.history.first().cloned(),
    }
}

fn sample_truth(problem: &Problem, s: &PreparedSample) -> Option<Vec<Mat>> {
    match problem.time {
        None => s.instance.reference.clone().map(|r| vec![r]),
        Some(tc) => {
            let given = s.instance.history.len();
            let tr = s.instance.trajectory.as_ref()?;
            (tr.len() >= given + tc.eval_steps).then(|| tr[given..given + tc.eval_steps].to_vec())
        }
    }
}

/// Score `op` on prepared samples: N-MSE when every sample has a reference,
/// physics-residual RMS otherwise.
pub fn evaluate_prepared(
    op: &Operator,
    problem: &Problem,
    samples: &[PreparedSample],
    beta: f64,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Config("evaluation set is empty".into()));
    }
    let spec = problem.residual();
    let with_truth = samples.iter().all(|s| sample_truth(problem, s).is_some());
    let metric = if with_truth {
        MetricKind::Nmse
    } else {
        MetricKind::ResidualRms
    };
    let parts = samples
        .par_iter()
        .map(|s| -> Result<(SamplePrediction, LossReport)> {
            let prediction = match problem.time {
                None => vec![predict_stationary(op, s)?],
                Some(tc) => {
                    let given = s.instance.history.len();
                    let states = rollout_predict(op, s.graph(), &s.instance.history, tc.window, tc.eval_steps)?;
                    states[given..].to_vec()
                }
            };
            let truth = sample_truth(problem, s);
            let (error, report) = match (&truth, problem.time) {
                (Some(t), _) if with_truth => (relative_sq_error(&prediction, t)?, LossReport::new(0.0, 0.0, beta)),
                (_, None) => {
                    let r = stationary_loss(op, spec.as_ref(), &[s.stationary()?], beta)?;
                    (r.residual_rms(), r)
                }
                (_, Some(tc)) => {
                    let params = RolloutParams {
                        k: tc.window,
                        steps: tc.eval_steps,
                        dt: tc.dt,
                        beta,
                        full_backprop: false,
                    };
                    let r = rollout_loss(op, spec.as_ref(), &[s.rollout()], &params, false)?.report;
                    (r.residual_rms(), r)
                }
            };
            Ok((
                SamplePrediction {
                    seed: s.instance.seed,
                    coords: s.instance.cloud.coords.clone(),
                    input: plot_input(s),
                    truth,
                    prediction,
                    error,
                },
                report,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let per_sample: Vec<f64> = parts.iter().map(|(p, _)| p.error).collect();
    let value = match metric {
        MetricKind::Nmse => per_sample.iter().sum::<f64>() / per_sample.len() as f64,
        MetricKind::ResidualRms => {
            let reports: Vec<LossReport> = parts.iter().map(|(_, r)| *r).collect();
            LossReport::mean(&reports, beta).residual_rms()
        }
    };
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: 0,
            context: format!("evaluation {} = {value}", metric.as_str()),
        });
    }
    Ok(EvalReport {
        metric,
        value,
        per_sample,
        predictions: parts.into_iter().map(|(p, _)| p).collect(),
    })
}

/// Replace the references of `samples` with those in an external file. Field
/// files supply stationary solutions, trajectory files full trajectories
/// starting with the given history.
pub fn attach_external_reference(samples: &mut [PreparedSample], path: &Path) -> Result<()> {
    for (i, s) in samples.iter_mut().enumerate() {
        match load_external_reference(path, i, &s.instance.cloud.coords)? {
            ExternalReference::Field(m) => s.instance.reference = Some(m),
            ExternalReference::Trajectory(_, states) => s.instance.trajectory = Some(states),
        }
    }
    Ok(())
}

fn stack(states: &[Mat]) -> Array3<f64> {
    let views: Vec<_> = states.iter().map(|m| m.view().insert_axis(Axis(0))).collect();
    ndarray::concatenate(Axis(0), &views).expect("states share a shape")
}

fn unstack(c: &Container, name: &str) -> Result<Vec<Mat>> {
    let (shape, data) = c.f64s(name)?;
    if shape.len() != 3 {
        return Err(Error::SchemaMismatch(format!(
            "{name}: expected 3 dimensions, found {shape:?}"
        )));
    }
    let a = Array3::from_shape_vec((shape[0], shape[1], shape[2]), data.to_vec()).expect("shape checked");
    Ok(a.outer_iter().map(|m| m.to_owned()).collect())
}

fn key(i: usize, field: &str) -> String {
    format!("sample{i:05}/{field}")
}

pub fn write_predictions(path: &Path, problem: &Problem, report: &EvalReport) -> Result<()> {
    let meta = json!({
        "problem": problem.name,
        "time_dependent": problem.is_time_dependent(),
        "metric": report.metric,
        "value": report.value,
    });
    let mut c = Container::new(PREDICTIONS_KIND, meta);
    c.insert_i64("seeds", report.predictions.iter().map(|p| p.seed as i64).collect());
    c.insert_f64("errors", vec![report.per_sample.len()], report.per_sample.clone());
    for (i, p) in report.predictions.iter().enumerate() {
        c.insert_mat(key(i, "coords"), &p.coords);
        if let Some(a) = &p.input {
            c.insert_mat(key(i, "input"), a);
        }
        let pred = stack(&p.prediction);
        c.insert_f64(
            key(i, "prediction"),
            pred.shape().to_vec(),
            pred.iter().copied().collect(),
        );
        if let Some(t) = &p.truth {
            let t = stack(t);
            c.insert_f64(key(i, "truth"), t.shape().to_vec(), t.iter().copied().collect());
        }
    }
    c.write(path)
}

/// Predictions file contents: problem name, time dependence and samples.
pub fn read_predictions(path: &Path) -> Result<(String, bool, Vec<SamplePrediction>)> {
    let c = Container::read_kind(path, PREDICTIONS_KIND)?;
    let problem = c.meta["problem"]
        .as_str()
        .ok_or_else(|| Error::SchemaMismatch("predictions without a problem name".into()))?
        .to_string();
    let time_dependent = c.meta["time_dependent"].as_bool().unwrap_or(false);
    let seeds = c.i64s("seeds")?.to_vec();
    let errors = c.vector("errors")?;
    let samples = seeds
        .iter()
        .enumerate()
        .map(|(i, &seed)| {
            let opt = |name: &str| -> Result<Option<Mat>> {
                let k = key(i, name);
                if c.contains(&k) {
                    c.mat(&k).map(Some)
                } else {
                    Ok(None)
                }
            };
            let tk = key(i, "truth");
            Ok(SamplePrediction {
                seed: seed as u64,
                coords: c.mat(&key(i, "coords"))?,
                input: opt("input")?,
                truth: if c.contains(&tk) { Some(unstack(&c, &tk)?) } else { None },
                prediction: unstack(&c, &key(i, "prediction"))?,
                error: errors.get(i).copied().unwrap_or(f64::NAN),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((problem, time_dependent, samples))
}

#[derive(Clone, Debug)]
pub struct EvaluateOptions {
    pub checkpoint: PathBuf,
    pub dataset: PathBuf,
    pub out_dir: PathBuf,
    /// External ground truth for datasets without references.
    pub reference: Option<PathBuf>,
    /// Number of samples to plot.
    pub plot_samples: usize,
}

#[derive(Serialize)]
struct EvalSummary<'a> {
    problem: String,
    metric: MetricKind,
    value: f64,
    full_scale_target: f64,
    n_samples: usize,
    per_sample: &'a [f64],
    seeds: Vec<u64>,
}

/// Score a checkpoint on a dataset file and write `eval.json`,
/// `predictions.pgno` and plots into `out_dir`.
pub fn evaluate(opts: &EvaluateOptions) -> Result<EvalReport> {
    let ckpt = load_checkpoint(&opts.checkpoint)?;
    let extra = RunExtra::from_json(&ckpt.extra)?;
    let data = Dataset::read(&opts.dataset)?;
    check_compatible(&extra.config, &data.problem)?;
    let mut samples = prepare(
        &data.problem,
        extra.config.geometry,
        data.instances,
        &extra.graph_params,
        &extra.config.stencil,
        extra.config.graph_cache.as_deref(),
    )?;
    if let Some(r) = &opts.reference {
        attach_external_reference(&mut samples, r)?;
    }
    let beta = extra.config.beta(&data.problem);
    let report = evaluate_prepared(&ckpt.operator, &data.problem, &samples, beta)?;
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| Error::io(&opts.out_dir, e))?;
    let summary = EvalSummary {
        problem: data.problem.name.to_string(),
        metric: report.metric,
        value: report.value,
        full_scale_target: full_scale_target(data.problem.name),
        n_samples: report.per_sample.len(),
        per_sample: &report.per_sample,
        seeds: report.predictions.iter().map(|p| p.seed).collect(),
    };
    let json_path = opts.out_dir.join("eval.json");
    std::fs::write(
        &json_path,
        serde_json::to_string_pretty(&summary).expect("summary serializes"),
    )
    .map_err(|e| Error::io(&json_path, e))?;
    write_predictions(&opts.out_dir.join("predictions.pgno"), &data.problem, &report)?;
    let n = opts.plot_samples.min(report.predictions.len());
    plot_predictions(
        data.problem.name.as_str(),
        data.problem.is_time_dependent(),
        &report.predictions[..n],
        &opts.out_dir.join("plots"),
    )?;
    Ok(report)
}

fn check_compatible(config: &TrainConfig, problem: &Problem) -> Result<()> {
    if config.problem != problem.name {
        return Err(Error::Config(format!(
            "checkpoint was trained on {}, dataset holds {}",
            config.problem, problem.name
        )));
    }
    Ok(())
}
