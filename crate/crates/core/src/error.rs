use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("k-NN graph is disconnected ({components} components)")]
    DisconnectedGraph { components: usize },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("eigen-decomposition did not converge for a {n}x{n} Laplacian")]
    EigSolverFailure { n: usize },

    #[error("insufficient neighbors for {} node(s), first offenders (node, count): {:?}", .nodes.len(), &.nodes[..nodes.len().min(8)])]
    InsufficientNeighbors {
        nodes: Vec<(usize, usize)>,
        required: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("spectral modes mismatch: operator expects {expected}, graph provides {found}")]
    ModeMismatch { expected: usize, found: usize },

    #[error("boundary segment {0} has no points")]
    EmptySegment(usize),

    #[error("residual needs derivative order {0} but no stencils were supplied")]
    MissingDerivativeOrder(u8),

    #[error("non-finite loss at step {step}: {context}")]
    NonFiniteLoss { step: usize, context: String },

    #[error("solver blow-up at t = {time}: max |u| = {max_abs}")]
    BlowUp { time: f64, max_abs: f64 },

    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),

    #[error("coordinates mismatch: {0}")]
    CoordsMismatch(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
