pub mod autodiff;
pub mod container;
pub mod dataset;
pub mod error;
pub mod geometry;
pub mod graph;
pub mod harness;
pub mod loss;
pub mod operator;
pub mod optim;
pub mod problems;
pub mod solvers;
pub mod sparse;
pub mod stencil;

pub use error::{Error, Result};
