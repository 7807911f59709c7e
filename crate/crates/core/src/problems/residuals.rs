//! Differential operators of the benchmark problems.

use std::sync::Arc;

use crate::autodiff::Var;
use crate::error::Result;
use crate::loss::{ResidualCtx, ResidualSpec};

/// `Δu − f`, with `f` supplied as the first problem-input column.
#[derive(Clone, Copy, Debug, Default)]
pub struct PoissonResidual;

impl ResidualSpec for PoissonResidual {
    fn required_orders(&self) -> &'static [u8] {
        &[2]
    }

    fn residual(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let lap = ctx.laplacian(u)?;
        let f = ctx.inputs()?;
        let f = ctx.channel(f, 0);
        Ok(ctx.tape.sub(lap, f))
    }
}

/// `−∇·(a∇u) − f` with constant `a` and `f`.
#[derive(Clone, Copy, Debug)]
pub struct DarcyResidual {
    pub permeability: f64,
    pub source: f64,
}

impl ResidualSpec for DarcyResidual {
    fn required_orders(&self) -> &'static [u8] {
        &[2]
    }

    fn residual(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let lap = ctx.laplacian(u)?;
        let r = ctx.tape.scale(lap, -self.permeability);
        Ok(ctx.tape.offset(r, -self.source))
    }
}

/// Plane-stress linear elasticity in displacements `(u, v)`; segments
/// `≥ traction_from` are traction-free (`σ_yy = σ_xy = 0` on horizontal
/// edges, written as `v_y` and `(u_y + v_x)/2`).
#[derive(Clone, Copy, Debug)]
pub struct PlateResidual {
    pub youngs_modulus: f64,
    pub poisson_ratio: f64,
    pub traction_from: i64,
}

impl ResidualSpec for PlateResidual {
    fn required_orders(&self) -> &'static [u8] {
        &[1, 2]
    }

    fn channels(&self) -> usize {
        2
    }

    fn residual(&self, ctx: &mut ResidualCtx, w: Var) -> Result<Var> {
        let mu = self.poisson_ratio;
        let c = self.youngs_modulus / (1.0 - mu * mu);
        let u = ctx.channel(w, 0);
        let v = ctx.channel(w, 1);
        let mut eq = |a: Var, b: Var, main: usize, cross: usize| -> Result<Var> {
            let a_main = ctx.dxx(a, main, main)?;
            let a_cross = ctx.dxx(a, cross, cross)?;
            let b_mixed = ctx.dxx(b, 0, 1)?;
            let t1 = ctx.tape.scale(a_cross, (1.0 - mu) / 2.0);
            let t2 = ctx.tape.scale(b_mixed, (1.0 + mu) / 2.0);
            let s = ctx.tape.add(a_main, t1);
            let s = ctx.tape.add(s, t2);
            Ok(ctx.tape.scale(s, c))
        };
        let ru = eq(u, v, 0, 1)?;
        let rv = eq(v, u, 1, 0)?;
        Ok(ctx.tape.concat(&[ru, rv]))
    }

    fn boundary_residual(&self, ctx: &mut ResidualCtx, w: Var) -> Result<Option<Var>> {
        let nodes: Vec<usize> = ctx
            .graph
            .segment_id()
            .iter()
            .enumerate()
            .filter(|(_, &s)| s >= self.traction_from)
            .map(|(i, _)| i)
            .collect();
        if nodes.is_empty() {
            return Ok(None);
        }
        let u = ctx.channel(w, 0);
        let v = ctx.channel(w, 1);
        let v_y = ctx.dx(v, 1)?;
        let u_y = ctx.dx(u, 1)?;
        let v_x = ctx.dx(v, 0)?;
        let shear = ctx.tape.add(u_y, v_x);
        let shear = ctx.tape.scale(shear, 0.5);
        let both = ctx.tape.concat(&[v_y, shear]);
        Ok(Some(ctx.tape.gather_rows(both, Arc::new(nodes))))
    }
}

/// `F(u) = −u u_x + ν u_xx`.
#[derive(Clone, Copy, Debug)]
pub struct BurgersRhs {
    pub nu: f64,
}

impl ResidualSpec for BurgersRhs {
    fn required_orders(&self) -> &'static [u8] {
        &[1, 2]
    }

    fn rhs(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let ux = ctx.dx(u, 0)?;
        let uxx = ctx.dxx(u, 0, 0)?;
        let adv = ctx.tape.mul(u, ux);
        let diff = ctx.tape.scale(uxx, self.nu);
        Ok(ctx.tape.sub(diff, adv))
    }
}

/// `F(u) = −u u_x − u_xx − ν u_xxxx`.
#[derive(Clone, Copy, Debug)]
pub struct KsRhs {
    pub nu: f64,
}

impl ResidualSpec for KsRhs {
    fn required_orders(&self) -> &'static [u8] {
        &[1, 2]
    }

    fn rhs(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let ux = ctx.dx(u, 0)?;
        let uxx = ctx.dxx(u, 0, 0)?;
        let u4 = ctx.d4(u, 0)?;
        let adv = ctx.tape.mul(u, ux);
        let hyper = ctx.tape.scale(u4, self.nu);
        let s = ctx.tape.add(adv, uxx);
        let s = ctx.tape.add(s, hyper);
        Ok(ctx.tape.scale(s, -1.0))
    }
}

/// `F(u) = εΔu + u − u³`.
#[derive(Clone, Copy, Debug)]
pub struct AllenCahnRhs {
    pub eps: f64,
}

impl ResidualSpec for AllenCahnRhs {
    fn required_orders(&self) -> &'static [u8] {
        &[2]
    }

    fn rhs(&self, ctx: &mut ResidualCtx, u: Var) -> Result<Var> {
        let lap = ctx.laplacian(u)?;
        let diff = ctx.tape.scale(lap, self.eps);
        let u2 = ctx.tape.mul(u, u);
        let u3 = ctx.tape.mul(u2, u);
        let reaction = ctx.tape.sub(u, u3);
        Ok(ctx.tape.add(diff, reaction))
    }
}
