//! Dense and convolutional building blocks with tape-based reverse-mode
//! differentiation, plain SGD and binary checkpoints.

pub mod checkpoint;
mod gradcheck;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use graph::{Graph, NodeId, Pointwise};
pub use params::{Gradients, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("dimension error: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[cfg(test)]
mod tests;
