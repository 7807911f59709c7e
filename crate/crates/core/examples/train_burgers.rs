//! Autoregressive rollout training on viscous Burgers with the Crank–Nicolson
//! physics loss, evaluated on longer rollouts than seen in training.
//!
//! cargo run --release --example train_burgers [-- EPOCHS]

use physgno::harness::{train, TrainConfig};

const CONFIG: &str = r#"
problem = "burgers"
n_train = 16
n_test = 4
batch_size = 2
eval_every = 1
[problem_params]
resolution = 128
train_steps = 25
eval_steps = 50
[operator]
hidden_channels = 32
num_blocks = 4
modes = 32
gating_hidden = 32
embedding_dim = 16
"#;

fn main() -> physgno::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).unwrap_or_else(|| "5".into());
    let out = std::env::temp_dir().join("physgno_train_burgers");
    let cfg = TrainConfig::from_toml_str(
        CONFIG,
        &[format!("epochs={epochs}"), format!("output_dir=\"{}\"", out.display())],
    )?;
    let run = train(&cfg)?;
    println!(
        "training residual RMS {:.4e} → {:.4e}",
        run.initial.residual_rms(),
        run.final_report.residual_rms()
    );
    if let Some(e) = run.eval {
        println!(
            "test N-MSE over {} steps: {:.4}",
            e.predictions[0].prediction.len(),
            e.value
        );
    }
    Ok(())
}
