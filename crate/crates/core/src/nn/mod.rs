//! From-scratch dense/convolutional network engine.

mod gradcheck;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;

use thiserror::Error;

pub use gradcheck::{
    grad_check, relative_error, GradCheckOptions, GradCheckReport, Objective, ParamCheck,
};
pub use layer::{Conv2d, Dense, Layer, LayerSpec};
pub use loss::{cross_entropy, loss, mse, LossKind, Target, PROB_FLOOR};
pub use network::{Activations, Gradients, Mode, Network};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Real, Tensor};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("invalid tensor shape {0:?}")]
    InvalidShape(Vec<usize>),
    #[error("layer {layer:?} cannot accept input of shape {input:?}")]
    LayerShape { layer: LayerSpec, input: Vec<usize> },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("class index {class} out of range for {classes} classes")]
    InvalidClass { class: usize, classes: usize },
    #[error("activations do not belong to this network")]
    StaleActivations,
    #[error("first layer is not dense")]
    FirstLayerNotDense,
    #[error("feature index {index} out of range for {inputs} inputs")]
    FeatureIndex { index: usize, inputs: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}
