//! From-scratch tensor and layer engine: convolution, pooling, dense,
//! dropout, ReLU/LeakyReLU/SReLU, softmax, residual blocks, class-weighted
//! cross-entropy, RMSProp/Adam training, a finite-difference gradient
//! checker, and a versioned binary model format.

pub mod gradcheck;
pub mod io;
pub mod layers;
pub mod loss;
pub mod optim;
pub mod presets;
pub mod tensor;
pub mod train;

pub use gradcheck::grad_check;
pub use layers::{
    backward, build_model, forward, ActivationKind, Cache, ForwardMode, LayerConfig, LayerKind,
    Precision,
};
pub use loss::{softmax_rows, weighted_cross_entropy};
pub use optim::{adam_step, rmsprop_step, Optimizer, OptimizerKind};
pub use presets::{preset, PresetName, PresetSpec};
pub use tensor::Tensor;
pub use train::{train, EpochStats, TrainConfig, TrainedModel};

#[derive(Debug, thiserror::Error)]
pub enum NnError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Divergence { epoch: usize },
    #[error("gradient check requires 64-bit precision mode")]
    Precision,
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("model file {path}: {msg}")]
    Format { path: String, msg: String },
}
