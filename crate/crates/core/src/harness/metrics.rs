//! Per-epoch metrics file.
//!
//! Plain CSV with the header
//! `epoch,total_loss,pde_loss,bc_loss,eval_metric,lr,wall_time_s`, preceded by
//! one `#` line naming the problem, the evaluation metric and the published
//! full-scale N-MSE. `eval_metric` is empty on epochs without evaluation.

use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problems::ProblemName;

pub const METRICS_HEADER: &str = "epoch,total_loss,pde_loss,bc_loss,eval_metric,lr,wall_time_s";

/// Published full-scale test N-MSE of each benchmark.
pub fn full_scale_target(problem: ProblemName) -> f64 {
    match problem {
        ProblemName::Poisson => 0.0162,
        ProblemName::DarcyStar => 0.0260,
        ProblemName::Plate => 0.0159,
        ProblemName::DarcyPentagon => 0.1014,
        ProblemName::PlateVariable => 0.0890,
        ProblemName::Burgers => 0.3040,
        ProblemName::Ks => 1.6128,
        ProblemName::AllenCahn => 0.0685,
    }
}

/// How a run is scored.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Mean over samples of `‖pred − true‖² / ‖true‖²`.
    Nmse,
    /// Physics-residual RMS, for data without ground truth.
    ResidualRms,
}

impl MetricKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Nmse => "nmse",
            MetricKind::ResidualRms => "residual_rms",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub total_loss: f64,
    pub pde_loss: f64,
    pub bc_loss: f64,
    pub eval_metric: Option<f64>,
    pub lr: f64,
    pub wall_time_s: f64,
}

pub struct MetricsWriter {
    path: PathBuf,
    writer: csv::Writer<File>,
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::SchemaMismatch(format!("{}: {other:?}", path.display())),
    }
}

impl MetricsWriter {
    /// Create `path` with the comment and header lines, or append to it when
    /// `append` is set and it already exists.
    pub fn open(path: &Path, problem: ProblemName, metric: MetricKind, append: bool) -> Result<Self> {
        let resume = append && path.exists();
        let mut file = OpenOptions::new()
            .create(true)
            .write(true)
            .append(resume)
            .truncate(!resume)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        if !resume {
            writeln!(
                file,
                "# problem={problem} metric={} full_scale_target={}",
                metric.as_str(),
                full_scale_target(problem)
            )
            .map_err(|e| Error::io(path, e))?;
        }
        let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(file);
        if !resume {
            writer
                .write_record(METRICS_HEADER.split(','))
                .map_err(|e| csv_err(path, e))?;
        }
        Ok(Self {
            path: path.to_path_buf(),
            writer,
        })
    }

    pub fn append(&mut self, row: &MetricsRow) -> Result<()> {
        self.writer.serialize(row).map_err(|e| csv_err(&self.path, e))?;
        self.writer.flush().map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    reader.deserialize().map(|r| r.map_err(|e| csv_err(path, e))).collect()
}
