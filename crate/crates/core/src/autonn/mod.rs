//! Dense `f64` tensors with tape-based reverse-mode differentiation and the
//! layer set used by the odometry network.

pub mod checkpoint;
mod conv;
mod graph;
pub mod optim;
pub mod params;
mod tensor;

pub use graph::{BatchStats, BinaryOp, Graph, Mode, PoolKind, Var};
pub use optim::{Optimizer, OptimizerConfig};
pub use params::{BatchNorm, Cbr, Conv2d, Gradients, Linear, Param, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum AutonnError {
    #[error("tensor rank {0} unsupported (must be 1..=4)")]
    Rank(usize),
    #[error("shape {shape:?} needs {} values, got {len}", shape.iter().product::<usize>())]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("backward called on an empty tape")]
    EmptyTape,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("duplicate parameter name {0}")]
    DuplicateParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
