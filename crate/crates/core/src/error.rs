use alloc::string::String;
use alloc::vec::Vec;

use crate::vi::TraceRow;

/// Errors produced anywhere in the core crate.
#[derive(Debug, Clone, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node {node} ({op}): {detail}")]
    Shape {
        node: usize,
        op: &'static str,
        detail: String,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("expected a scalar output, found shape {0:?}")]
    NonScalar(Vec<usize>),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} `{name}`")]
    Unknown { kind: &'static str, name: String },

    #[error("too few samples: need at least {needed}, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("non-finite potential energy")]
    NonFinitePotential { position: Vec<f64> },

    #[error("Laplace invalid at this mode: smallest Hessian eigenvalue {eigenvalue:e}")]
    NotPositiveDefinite { eigenvalue: f64 },

    #[error("MAP optimisation did not converge (gradient norm {grad_norm:e})")]
    NotConverged { grad_norm: f64 },

    #[error("ADF variance collapse at parameter {index}: mean {mean}, variance {variance}")]
    VarianceCollapse {
        index: usize,
        mean: f64,
        variance: f64,
        state_mean: Vec<f64>,
        state_variance: Vec<f64>,
    },

    #[error("Cholesky factorisation failed after jitter {jitter:e}")]
    Cholesky { jitter: f64 },

    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Vec<TraceRow> },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
