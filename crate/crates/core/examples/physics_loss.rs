//! Physics-informed loss of fixed fields on a Poisson instance: the analytic
//! solution versus a zero field, across resolutions.
//!
//! cargo run --release --example physics_loss

use std::sync::Arc;

use physgno::graph::build_knn_graph;
use physgno::loss::{stationary_loss, FixedField, ModelInput, StationarySample};
use physgno::problems::{Problem, ProblemConfig, ProblemName};
use physgno::stencil::{StencilParams, StencilSet};

fn main() -> physgno::Result<()> {
    for n in [16, 32, 64] {
        let p = Problem::from_config(
            ProblemName::Poisson,
            &ProblemConfig {
                resolution: Some(n),
                ..Default::default()
            },
        )?;
        let inst = p.sample(5)?;
        let stencils = StencilSet::with_params(&inst.cloud, &StencilParams::default())?;
        let graph = build_knn_graph(inst.cloud.clone(), 6)?;
        let f = inst.input.clone().expect("Poisson source");
        let pde_nodes = Arc::new(inst.pde_nodes());
        let dirichlet = inst.dirichlet();
        let sample = StationarySample {
            graph: &graph,
            stencils: Some(&stencils),
            input: ModelInput::Nodes(&f),
            problem_inputs: Some(&f),
            pde_nodes: &pde_nodes,
            dirichlet: dirichlet.as_ref(),
        };
        let spec = p.residual();
        let exact = stationary_loss(
            &FixedField::new(inst.reference.clone().unwrap()),
            spec.as_ref(),
            &[sample],
            p.default_beta(),
        )?;
        let zero = stationary_loss(
            &FixedField::new(f.mapv(|_| 0.0)),
            spec.as_ref(),
            &[sample],
            p.default_beta(),
        )?;
        println!(
            "{n:>3}×{n:<3} exact: pde {:.3e} bc {:.1e} | zero field: pde {:.3e} bc {:.1e}",
            exact.pde_loss, exact.bc_loss, zero.pde_loss, zero.bc_loss
        );
    }
    Ok(())
}
