//! Command-line driver: `generate`, `train`, `evaluate`, `plot`.
//!
//! Exit codes: 0 success, 1 other failures (I/O, bad files), 2 configuration
//! errors, 3 numerical failures.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use physgno::dataset::generate_dataset;
use physgno::harness::{self, apply_overrides, resolve_output, EvaluateOptions, TrainConfig};
use physgno::problems::{Problem, ProblemConfig, ProblemName};
use physgno::Error;

#[derive(Parser)]
#[command(
    name = "physgno",
    version,
    about = "Physics-informed graph neural operators on point clouds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample train/test instances and write dataset files.
    Generate {
        #[arg(long)]
        problem: ProblemName,
        #[arg(long, default_value_t = 400)]
        n_train: usize,
        #[arg(long, default_value_t = 100)]
        n_test: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory (relative paths go under $PHYSGNO_OUTPUT_ROOT).
        #[arg(long)]
        out: PathBuf,
        /// Problem parameter, e.g. `resolution=32`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train from a TOML config.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Config override, e.g. `optimizer.lr0=0.0005`.
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// Score a checkpoint on a dataset file.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Dataset file with externally computed references.
        #[arg(long)]
        reference: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        plot_samples: usize,
    },
    /// Render a predictions file written by `evaluate`.
    Plot {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        samples: usize,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) => 2,
        Error::NonFiniteLoss { .. }
        | Error::BlowUp { .. }
        | Error::EigSolverFailure { .. }
        | Error::DisconnectedGraph { .. }
        | Error::InsufficientNeighbors { .. } => 3,
        _ => 1,
    }
}

fn run(cli: Cli) -> physgno::Result<()> {
    match cli.command {
        Command::Generate {
            problem,
            n_train,
            n_test,
            seed,
            out,
            set,
        } => {
            let mut table = toml::Table::new();
            apply_overrides(&mut table, &set)?;
            let params: ProblemConfig = toml::Value::Table(table)
                .try_into()
                .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
            let problem = Problem::from_config(problem, &params)?;
            let files = generate_dataset(&problem, n_train, n_test, seed, &resolve_output(&out))?;
            println!("{}", files.train.display());
            if let Some(t) = files.test {
                println!("{}", t.display());
            }
        }
        Command::Train { config, overrides } => {
            let cfg = TrainConfig::load(&config, &overrides)?;
            let out = harness::train(&cfg)?;
            println!("checkpoint {}", out.checkpoint.display());
            println!("metrics {}", out.metrics.display());
            if let Some(e) = out.eval {
                println!("{} {:.6e}", e.metric.as_str(), e.value);
            }
        }
        Command::Evaluate {
            checkpoint,
            dataset,
            out,
            reference,
            plot_samples,
        } => {
            let report = harness::evaluate(&EvaluateOptions {
                checkpoint,
                dataset,
                out_dir: resolve_output(&out),
                reference,
                plot_samples,
            })?;
            println!("{} {:.6e}", report.metric.as_str(), report.value);
        }
        Command::Plot {
            predictions,
            out,
            samples,
        } => {
            let (problem, time_dependent, preds) = harness::read_predictions(&predictions)?;
            let n = samples.min(preds.len());
            let paths = harness::plot_predictions(&problem, time_dependent, &preds[..n], &resolve_output(&out))?;
            for p in paths {
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
