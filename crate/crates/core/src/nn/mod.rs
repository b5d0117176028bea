//! Minimal neural-network engine for the Siamese verification model.

mod adam;
mod gradcheck;
mod loss;
mod model;
mod ops;
mod params;
mod tensor;

use thiserror::Error;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{
    compare_gradient, fd_resolution, gradcheck, relative_error, BlockReport, GradcheckConfig, GradcheckReport,
};
pub use loss::{contrastive_loss, softmax_xent};
pub use model::{reference_trunk, scaled_trunk, Batch, Head, LayerSpec, Mode, SiameseModel};
pub use ops::{conv2d, maxpool2d};
pub use params::{ParamBlock, ParamLayout, ParamVector};
pub use tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: Vec<usize>, actual: Vec<usize> },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },
    #[error("kernel {kernel}x{kernel} does not fit a {height}x{width} input")]
    KernelTooLarge { kernel: usize, height: usize, width: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("parameter layouts differ")]
    LayoutMismatch,
    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
}
