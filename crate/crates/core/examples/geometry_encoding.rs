//! Boundary interpolation into a Darcy star domain, and the geometry
//! encoder's pooled code ζ for a few random pentagons.
//!
//! cargo run --release --example geometry_encoding

use physgno::autodiff::Tape;
use physgno::geometry::{interpolate_bc, GeometryStrategy};
use physgno::graph::build_knn_graph;
use physgno::operator::{LiftKind, Operator, OperatorConfig};
use physgno::problems::{Problem, ProblemConfig, ProblemName};

fn main() -> physgno::Result<()> {
    let star = Problem::from_config(
        ProblemName::DarcyStar,
        &ProblemConfig {
            spacing: Some(0.08),
            ..Default::default()
        },
    )?;
    let inst = star.sample(0)?;
    let bd = inst.boundary.as_ref().expect("star has boundary data");
    let graph = build_knn_graph(inst.cloud.clone(), 6)?;
    let field = interpolate_bc(&graph, bd, star.n_segments())?;
    println!(
        "star: {} nodes, {} boundary samples on {} segments, interpolated field {:?} in [{:.3}, {:.3}]",
        inst.len(),
        bd.len(),
        star.n_segments(),
        field.dim(),
        field.fold(f64::INFINITY, |a, &b| a.min(b)),
        field.fold(f64::NEG_INFINITY, |a, &b| a.max(b))
    );
    for s in [
        GeometryStrategy::None,
        GeometryStrategy::Interpolate,
        GeometryStrategy::EncoderGeo,
    ] {
        println!("    {s:?}: {} input channels", star.in_channels(s)?);
    }

    let op = Operator::new(OperatorConfig {
        in_channels: 1,
        hidden_channels: 8,
        out_channels: 1,
        num_blocks: 1,
        modes: 8,
        embedding_dim: 4,
        encoder_hidden: 8,
        lift: LiftKind::EncoderGeo,
        ..Default::default()
    })?;
    let enc = op.encoder.as_ref().expect("encoder lift");
    let pentagon = Problem::from_config(
        ProblemName::DarcyPentagon,
        &ProblemConfig {
            spacing: Some(0.1),
            ..Default::default()
        },
    )?;
    for seed in 0..4 {
        let inst = pentagon.sample(seed)?;
        let bd = inst.boundary.as_ref().expect("pentagon has boundary data");
        let mut tape = Tape::new(&op.params);
        let v = tape.constant(bd.bc_values.clone());
        let x = tape.constant(bd.bc_coords.clone());
        let zeta = enc.zeta(&op, &mut tape, v, x)?;
        let z = tape.value(zeta);
        println!(
            "pentagon {seed}: {} nodes, ζ[..4] = {:.4}",
            inst.len(),
            z.slice(ndarray::s![0, ..4])
        );
    }
    Ok(())
}
