//! Checkpoint files.
//!
//! A checkpoint is a container of kind `checkpoint`. Its metadata holds the
//! operator config (`config`), the epoch count, optimizer scalars and any
//! caller-supplied `extra` object. Arrays:
//!
//! - `param.<name>`: one per parameter, logical shape, e.g.
//!   `param.blocks.2.spectral_kernel` with shape `[m, d_v, d_v]`;
//! - `normalizer.{in_mean,in_std,coord_mean,coord_std,out_mean,out_std}`;
//! - `adam.m.<name>`, `adam.v.<name>` when optimizer state is saved.

use std::path::Path;

use crate::container::Container;
use crate::error::{Error, Result};
use crate::optim::Adam;

use super::{Normalizer, Operator, OperatorConfig};

pub const CHECKPOINT_KIND: &str = "checkpoint";

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub operator: Operator,
    pub adam: Option<Adam>,
    /// Number of completed epochs.
    pub epoch: usize,
    pub extra: serde_json::Value,
}

pub fn save_checkpoint(
    path: &Path,
    op: &Operator,
    adam: Option<&Adam>,
    epoch: usize,
    extra: serde_json::Value,
) -> Result<()> {
    let meta = serde_json::json!({
        "config": op.config,
        "epoch": epoch,
        "adam": adam.map(|a| serde_json::json!({
            "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step,
        })),
        "extra": extra,
    });
    let mut c = Container::new(CHECKPOINT_KIND, meta);
    for e in op.params.entries() {
        c.insert_f64(
            format!("param.{}", e.name),
            e.shape.clone(),
            e.value.iter().copied().collect(),
        );
    }
    let n = &op.normalizer;
    for (name, v) in [
        ("in_mean", &n.in_mean),
        ("in_std", &n.in_std),
        ("coord_mean", &n.coord_mean),
        ("coord_std", &n.coord_std),
        ("out_mean", &n.out_mean),
        ("out_std", &n.out_std),
    ] {
        c.insert_f64(format!("normalizer.{name}"), vec![v.len()], v.to_vec());
    }
    if let Some(a) = adam {
        for (i, e) in op.params.entries().iter().enumerate() {
            c.insert_f64(
                format!("adam.m.{}", e.name),
                e.shape.clone(),
                a.m[i].iter().copied().collect(),
            );
            c.insert_f64(
                format!("adam.v.{}", e.name),
                e.shape.clone(),
                a.v[i].iter().copied().collect(),
            );
        }
    }
    c.write(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let c = Container::read_kind(path, CHECKPOINT_KIND)?;
    let config: OperatorConfig = serde_json::from_value(
        c.meta
            .get("config")
            .cloned()
            .ok_or_else(|| Error::SchemaMismatch("checkpoint without config".into()))?,
    )
    .map_err(|e| Error::SchemaMismatch(format!("checkpoint config: {e}")))?;
    let mut op = Operator::new(config)?;
    let read = |name: &str, shape: &[usize], dim: (usize, usize)| -> Result<ndarray::Array2<f64>> {
        let (s, data) = c.f64s(name)?;
        if s != shape {
            return Err(Error::SchemaMismatch(format!(
                "{name}: shape {s:?}, expected {shape:?}"
            )));
        }
        Ok(ndarray::Array2::from_shape_vec(dim, data.to_vec()).expect("shape checked"))
    };
    let names: Vec<(String, Vec<usize>, (usize, usize))> = op
        .params
        .entries()
        .iter()
        .map(|e| (e.name.clone(), e.shape.clone(), e.value.dim()))
        .collect();
    for (i, (name, shape, dim)) in names.iter().enumerate() {
        let v = read(&format!("param.{name}"), shape, *dim)?;
        *op.params.get_mut(crate::autodiff::ParamId(i)) = v;
    }
    let vec = |name: &str| c.vector(&format!("normalizer.{name}"));
    op.normalizer = Normalizer {
        in_mean: vec("in_mean")?,
        in_std: vec("in_std")?,
        coord_mean: vec("coord_mean")?,
        coord_std: vec("coord_std")?,
        out_mean: vec("out_mean")?,
        out_std: vec("out_std")?,
    };
    let adam = match c.meta.get("adam") {
        Some(serde_json::Value::Object(a)) => {
            let mut adam = Adam::new(&op.params);
            let f = |k: &str| a.get(k).and_then(|v| v.as_f64());
            adam.beta1 = f("beta1").unwrap_or(adam.beta1);
            adam.beta2 = f("beta2").unwrap_or(adam.beta2);
            adam.eps = f("eps").unwrap_or(adam.eps);
            adam.step = a.get("step").and_then(|v| v.as_u64()).unwrap_or(0);
            for (i, (name, shape, dim)) in names.iter().enumerate() {
                adam.m[i] = read(&format!("adam.m.{name}"), shape, *dim)?;
                adam.v[i] = read(&format!("adam.v.{name}"), shape, *dim)?;
            }
            Some(adam)
        }
        _ => None,
    };
    Ok(Checkpoint {
        operator: op,
        adam,
        epoch: c.meta.get("epoch").and_then(|v| v.as_u64()).unwrap_or(0) as usize,
        extra: c.meta.get("extra").cloned().unwrap_or(serde_json::Value::Null),
    })
}
