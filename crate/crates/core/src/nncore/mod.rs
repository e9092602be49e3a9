//! Minimal reverse-mode autodiff and layer library.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod layers;
pub mod optim;
pub mod quant;
pub mod tensor;

pub use checkpoint::{Checkpoint, DType, QuantizedTensor};
pub use graph::{ActivationMode, Gradients, Graph, Var};
pub use layers::{LayerKind, LayerSpec};
pub use optim::{Adam, AdamHyper};
pub use quant::{RangeEma, UniformQuantizer};
pub use tensor::{ParamEntry, ParamKind, ParamSet, Partition, Precision, Tensor};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("layer `{layer}`: {detail}")]
    Dimension { layer: String, detail: String },
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("invalid state: {0}")]
    State(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("degenerate range [{min}, {max}]")]
    DegenerateRange { min: f64, max: f64 },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
