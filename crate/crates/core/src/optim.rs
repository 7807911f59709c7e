//! Adaptive-moment optimizer and the step learning-rate schedule.

use ndarray::{Array2, Zip};
use serde::{Deserialize, Serialize};

use crate::autodiff::{GradBuffer, Mat, ParamStore};

/// `lr(epoch) = lr0 · factor^⌊epoch / every⌋`, epochs counted from 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StepDecay {
    pub lr0: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
}

impl Default for StepDecay {
    fn default() -> Self {
        Self {
            lr0: 1e-3,
            decay_factor: 0.65,
            decay_every: 100,
        }
    }
}

impl StepDecay {
    pub fn lr(&self, epoch: usize) -> f64 {
        let k = epoch / self.decay_every.max(1);
        self.lr0 * self.decay_factor.powi(k as i32)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<Mat>,
    pub v: Vec<Mat>,
}

impl Adam {
    pub fn new(params: &ParamStore) -> Self {
        let zeros = || {
            params
                .entries()
                .iter()
                .map(|e| Array2::zeros(e.value.dim()))
                .collect::<Vec<_>>()
        };
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn update(&mut self, params: &mut ParamStore, grads: &GradBuffer, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let g = grads.get(id);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            Zip::from(params.get_mut(id))
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}
