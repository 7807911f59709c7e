use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Activation, ParamId, ParamStore, Tape, Var};

/// Affine map `x · W + b` with `W` stored `fan_in × fan_out`.
#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    /// Fan-in scaled uniform initialization, `U(−1/√fan_in, 1/√fan_in)`.
    pub fn new(
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
    ) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        let w = Array2::from_shape_fn((fan_in, fan_out), |_| rng.gen_range(-bound..bound));
        let weight = store.insert(format!("{name}.weight"), vec![fan_in, fan_out], w);
        let bias = bias.then(|| {
            let b = Array2::from_shape_fn((1, fan_out), |_| rng.gen_range(-bound..bound));
            store.insert(format!("{name}.bias"), vec![fan_out], b)
        });
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let w = tape.param(self.weight);
        let b = self.bias.map(|b| tape.param(b));
        tape.linear(x, w, b)
    }
}

/// Pointwise multilayer map; the activation sits between layers only.
#[derive(Clone, Debug)]
pub struct Mlp {
    pub layers: Vec<Linear>,
    pub act: Activation,
}

impl Mlp {
    /// `widths = [in, hidden.., out]`; layers are named `{name}.{i}`.
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, name: &str, widths: &[usize], act: Activation) -> Self {
        let layers = widths
            .windows(2)
            .enumerate()
            .map(|(i, w)| Linear::new(store, rng, &format!("{name}.{i}"), w[0], w[1], true))
            .collect();
        Self { layers, act }
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Var {
        let mut h = x;
        for (i, layer) in self.layers.iter().enumerate() {
            if i > 0 {
                h = tape.act(h, self.act);
            }
            h = layer.forward(tape, h);
        }
        h
    }
}
