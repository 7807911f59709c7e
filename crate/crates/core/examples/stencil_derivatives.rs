//! Stochastic-projection gradients and Laplacians of sin(πx)sin(πy) on
//! refining grids and on a jittered cloud.
//!
//! cargo run --release --example stencil_derivatives

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use physgno::graph::PointCloud;
use physgno::stencil::{StencilParams, StencilSet};

fn report(label: &str, cloud: &PointCloud) -> physgno::Result<()> {
    let s = StencilSet::with_params(cloud, &StencilParams::default())?;
    let u = Array2::from_shape_fn((cloud.len(), 1), |(p, _)| {
        (PI * cloud.coords[[p, 0]]).sin() * (PI * cloud.coords[[p, 1]]).sin()
    });
    let g = s.gradient(&u.view())?;
    let h = s.hessian(&u.view())?;
    let (mut ge, mut le, mut lref) = (0.0f64, 0.0, 0.0);
    for p in 0..cloud.len() {
        let (x, y) = (cloud.coords[[p, 0]], cloud.coords[[p, 1]]);
        ge = ge.max((g[[p, 0]] - PI * (PI * x).cos() * (PI * y).sin()).abs());
        // Laplacian error away from the one-sided boundary stencils
        if x.min(y).min(1.0 - x).min(1.0 - y) > 0.2 {
            let exact = -2.0 * PI * PI * u[[p, 0]];
            le += (h[[p, 0]] + h[[p, 3]] - exact).powi(2);
            lref += exact * exact;
        }
    }
    println!(
        "{label:>18}: max |∂x error| {ge:.3e}, relative Laplacian error {:.3e}",
        (le / lref).sqrt()
    );
    Ok(())
}

fn main() -> physgno::Result<()> {
    for n in [10, 20, 40, 80] {
        let m = n + 1;
        let h = 1.0 / n as f64;
        let coords = Array2::from_shape_fn(
            (m * m, 2),
            |(p, j)| if j == 0 { (p % m) as f64 * h } else { (p / m) as f64 * h },
        );
        report(&format!("grid h = 1/{n}"), &PointCloud::interior(coords))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 40;
    let coords = Array2::from_shape_fn(((n + 1) * (n + 1), 2), |(p, j)| {
        let base = if j == 0 { p % (n + 1) } else { p / (n + 1) } as f64;
        ((base + rng.gen_range(-0.3..0.3)) / n as f64).clamp(0.0, 1.0)
    });
    report("jittered h = 1/40", &PointCloud::interior(coords))?;
    Ok(())
}
