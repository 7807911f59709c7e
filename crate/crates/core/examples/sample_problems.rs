//! One instance of every problem in the suite, then a dataset written to and
//! read back from disk.
//!
//! cargo run --release --example sample_problems

use physgno::dataset::{generate_dataset, Dataset};
use physgno::problems::{Problem, ProblemConfig, ProblemName};

fn main() -> physgno::Result<()> {
    for name in ProblemName::ALL {
        let p = Problem::from_config(
            name,
            &ProblemConfig {
                spacing: match name {
                    ProblemName::Plate | ProblemName::PlateVariable => Some(1.0),
                    _ => Some(0.08),
                },
                resolution: Some(if name == ProblemName::Poisson || name == ProblemName::AllenCahn {
                    32
                } else {
                    128
                }),
                train_steps: Some(20),
                eval_steps: Some(20),
                ..Default::default()
            },
        )?;
        let inst = p.sample(1)?;
        let b = inst.boundary.as_ref().map_or(0, |b| b.len());
        let steps = inst.trajectory.as_ref().map_or(0, |t| t.len());
        println!(
            "{:>15}: {:>5} nodes, {:>4} boundary samples, {} geometry parameters, {} trajectory states",
            name.as_str(),
            inst.len(),
            b,
            inst.geometry.len(),
            steps
        );
    }

    let p = Problem::from_config(
        ProblemName::Burgers,
        &ProblemConfig {
            train_steps: Some(10),
            eval_steps: Some(10),
            ..Default::default()
        },
    )?;
    let dir = std::env::temp_dir().join("physgno_dataset_example");
    let files = generate_dataset(&p, 4, 2, 7, &dir)?;
    let train = Dataset::read(&files.train)?;
    println!(
        "wrote {} ({} samples) and {}",
        files.train.display(),
        train.len(),
        files.test.unwrap().display()
    );
    Ok(())
}
