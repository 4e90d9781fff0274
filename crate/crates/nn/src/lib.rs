//! Small CPU neural-network toolkit: tensors, a per-sample autodiff tape,
//! im2col convolutions and an Adam optimizer.

pub mod gradcheck;
mod graph;
pub mod init;
mod kernels;
pub mod optim;
mod params;
mod tensor;

pub use graph::{Graph, NodeId};
pub use optim::{Adam, AdamConfig};
pub use params::{Gradients, ParamId, ParamStore};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape {shape:?} does not hold {len} elements")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },
    #[error("expected rank {expected}, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },
    #[error("convolution weight {weight:?} incompatible with input {input:?}")]
    ConvShape {
        input: Vec<usize>,
        weight: Vec<usize>,
    },
    #[error("{0} needs at least one input")]
    Empty(&'static str),
    #[error("duplicate parameter name `{0}`")]
    DuplicateParam(String),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;
