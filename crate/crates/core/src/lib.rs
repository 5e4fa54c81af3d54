//! Hyperspectral pixel classification, weight-magnitude band pruning and
//! convolutional cell masking on a from-scratch neural-network engine.

pub mod classifier;
pub mod dataio;
mod error;
pub mod masker;
pub mod nn;
pub mod pipeline;
pub mod pruner;
pub mod rng;
pub mod synth;

pub use classifier::{EvalReport, MlpConfig, PixelModel};
pub use dataio::{Checkpoint, Class, FormatError, HyperCube, LabelMask, PixelDataset};
pub use error::{categorize, Categorize, Error, ErrorCategory};
pub use masker::CnnConfig;
pub use nn::{LayerSpec, Network, NnError, OptimizerKind, Tensor};
pub use pipeline::{ChipSet, NormStats, SplitSpec};
pub use pruner::{PruneConfig, PruneState, PruneStep};
pub use synth::SceneSpec;
