//! Spectral reference solvers: Burgers, Kuramoto–Sivashinsky and Allen–Cahn,
//! with their conserved or monotone quantities.
//!
//! cargo run --release --example reference_solvers

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use physgno::problems::samplers::{fourier_ic, Matern};
use physgno::solvers::{allen_cahn_energy, solve_allen_cahn_galerkin, solve_burgers_spectral, solve_ks_spectral};

fn main() -> physgno::Result<()> {
    let x: Vec<f64> = (0..256).map(|i| i as f64 / 256.0).collect();
    let u0: Vec<f64> = x.iter().map(|x| 0.3 + (2.0 * PI * x).sin()).collect();
    let b = solve_burgers_spectral(&u0, 0.0025, 0.005, 200)?;
    let last = b.states.last().unwrap();
    println!(
        "Burgers: {} states, mean {:.6} → {:.6}, max |u| {:.3} → {:.3}",
        b.states.len(),
        b.states[0].mean().unwrap(),
        last.mean().unwrap(),
        b.states[0].fold(0.0f64, |m, v| m.max(v.abs())),
        last.fold(0.0f64, |m, v| m.max(v.abs()))
    );

    let xs: Vec<f64> = (0..96).map(|i| i as f64 * 22.0 * PI / 96.0).collect();
    let ic = fourier_ic(&xs, 4, &mut ChaCha8Rng::seed_from_u64(2));
    let k = solve_ks_spectral(&ic, 1.0, 0.1, 400, 100.0)?;
    let energy: Vec<f64> = k
        .states
        .iter()
        .step_by(100)
        .map(|s| s.mapv(|v| v * v).mean().unwrap())
        .collect();
    println!(
        "KS: times {:.1}..{:.1}, mean-square energy every 10 s {energy:.3?}",
        k.times[0],
        k.times.last().unwrap()
    );

    let a0 = Matern::default().sample_grid(32, &mut ChaCha8Rng::seed_from_u64(3));
    let ac = solve_allen_cahn_galerkin(&a0, 0.01, 0.1, 10)?;
    let e: Vec<f64> = ac
        .states
        .iter()
        .map(|s| allen_cahn_energy(&s.clone().into_shape_with_order((32, 32)).unwrap(), 0.01))
        .collect();
    println!("Allen–Cahn: energy {e:.4?}");
    Ok(())
}
