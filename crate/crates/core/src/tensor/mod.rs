//! Dense tensors, a reverse-mode tape, parameters, optimizer and checkpoints.

mod array;
pub mod checkpoint;
mod gemm;
mod gradcheck;
mod graph;
mod optim;
mod param;

pub use array::Tensor;
pub use checkpoint::{Archive, CheckpointError, NamedArray};
pub use gemm::gemm;
pub use gradcheck::{grad_check, grad_check_params, relative_error, RELATIVE_FLOOR};
pub use graph::{Axis, Gradients, Graph, Var};
pub use optim::{clip_grad_norm, cosine_lr, AdamW};
pub use param::{Init, ParamId, ParamStore, Parameter};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch { op: &'static str, lhs: Vec<usize>, rhs: Vec<usize> },
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    LengthMismatch { shape: Vec<usize>, len: usize },
    #[error("{op}: index {index} out of range for shape {shape:?}")]
    OutOfRange { op: &'static str, shape: Vec<usize>, index: usize },
    #[error("{0}: empty input")]
    Empty(&'static str),
    #[error("expected a scalar output, got shape {0:?}")]
    NotScalar(Vec<usize>),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
}
