//! Training on the Darcy star domain from the physics loss alone; no
//! ground-truth solutions exist, so progress is the residual RMS.
//!
//! cargo run --release --example darcy_physics_only [-- EPOCHS]

use physgno::harness::{train, TrainConfig};

const CONFIG: &str = r#"
problem = "darcy_star"
n_train = 16
n_test = 0
batch_size = 4
geometry = "none"
[optimizer]
lr0 = 0.004
decay_every = 100
[problem_params]
spacing = 0.08
[operator]
hidden_channels = 32
num_blocks = 4
modes = 64
gating_hidden = 32
embedding_dim = 16
"#;

fn main() -> physgno::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let epochs = std::env::args().nth(1).unwrap_or_else(|| "100".into());
    let out = std::env::temp_dir().join("physgno_darcy_star");
    let cfg = TrainConfig::from_toml_str(
        CONFIG,
        &[format!("epochs={epochs}"), format!("output_dir=\"{}\"", out.display())],
    )?;
    let run = train(&cfg)?;
    let (r0, r1) = (run.initial.residual_rms(), run.final_report.residual_rms());
    println!("residual RMS {r0:.4e} → {r1:.4e} ({:.1}× lower)", r0 / r1);
    Ok(())
}
