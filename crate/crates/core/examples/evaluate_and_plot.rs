//! Train a tiny Poisson model, score it on a freshly generated test file and
//! render input / truth / prediction / error images.
//!
//! cargo run --release --example evaluate_and_plot

use physgno::dataset::generate_dataset;
use physgno::harness::{evaluate, train, EvaluateOptions, TrainConfig};

const CONFIG: &str = r#"
problem = "poisson"
n_train = 16
n_test = 0
epochs = 10
batch_size = 8
[problem_params]
resolution = 20
[operator]
hidden_channels = 16
num_blocks = 2
modes = 32
gating_hidden = 16
embedding_dim = 8
"#;

fn main() -> physgno::Result<()> {
    let root = std::env::temp_dir().join("physgno_evaluate_example");
    let cfg = TrainConfig::from_toml_str(CONFIG, &[format!("output_dir=\"{}\"", root.join("run").display())])?;
    let run = train(&cfg)?;
    let files = generate_dataset(&cfg.resolved_problem()?, 1, 4, 1234, &root.join("data"))?;
    let report = evaluate(&EvaluateOptions {
        checkpoint: run.checkpoint,
        dataset: files.test.expect("test split"),
        out_dir: root.join("eval"),
        reference: None,
        plot_samples: 2,
    })?;
    println!(
        "{} {:.4} over {} samples",
        report.metric.as_str(),
        report.value,
        report.per_sample.len()
    );
    println!("plots in {}", root.join("eval/plots").display());
    Ok(())
}
