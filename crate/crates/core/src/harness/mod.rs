//! Training and evaluation driver.
//!
//! A run is described by one TOML [`TrainConfig`]. [`train`] writes into the
//! run's output directory:
//!
//! - `config.toml`, the resolved configuration;
//! - `metrics.csv`, one row per epoch (see [`metrics`]);
//! - `checkpoints/epoch_NNNNN.pgno`, every `checkpoint_every` epochs and at
//!   the end;
//! - `diagnostics.json` when the loss turns non-finite.
//!
//! [`evaluate`] scores a checkpoint on a dataset file and writes
//! `eval.json`, `predictions.pgno` and PNG plots.

pub mod config;
mod evaluate;
pub mod metrics;
mod plot;
mod prepare;
mod train;

pub use config::{apply_overrides, resolve_output, OperatorSettings, TrainConfig, OUTPUT_ROOT_ENV};
pub use evaluate::{
    attach_external_reference, evaluate, evaluate_prepared, nmse, read_predictions, relative_sq_error,
    write_predictions, EvalReport, EvaluateOptions, SamplePrediction, PREDICTIONS_KIND,
};
pub use metrics::{full_scale_target, read_metrics, MetricKind, MetricsRow, METRICS_HEADER};
pub use plot::{plot_predictions, raster_grid, raster_scattered};
pub use prepare::{prepare, Discretization, PreparedSample};
pub use train::{
    build_operator, epoch_order, fit_normalizer, graph_params, load_instances, physics_report, prepare_run, train,
    train_prepared, RunData, RunExtra, TrainOutcome,
};
