//! Physics-informed training on the Poisson suite at a small scale, with a
//! test-set N-MSE against the analytic solutions.
//!
//! cargo run --release --example train_poisson [-- EPOCHS]

use physgno::harness::{train, TrainConfig};

const CONFIG: &str = r#"
problem = "poisson"
n_train = 64
n_test = 16
batch_size = 16
eval_every = 5
[optimizer]
lr0 = 0.005
decay_every = 10
[problem_params]
resolution = 24
[operator]
hidden_channels = 32
num_blocks = 4
modes = 48
gating_hidden = 32
embedding_dim = 16
"#;

fn main() -> physgno::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).unwrap_or_else(|| "20".into());
    let out = std::env::temp_dir().join("physgno_train_poisson");
    let cfg = TrainConfig::from_toml_str(
        CONFIG,
        &[format!("epochs={epochs}"), format!("output_dir=\"{}\"", out.display())],
    )?;
    let run = train(&cfg)?;
    for r in run.rows.iter().filter(|r| r.eval_metric.is_some()) {
        println!(
            "epoch {:>3}: loss {:.4e}, test N-MSE {:.4}",
            r.epoch,
            r.total_loss,
            r.eval_metric.unwrap()
        );
    }
    println!("checkpoint {}", run.checkpoint.display());
    Ok(())
}
