//! Residual temporal convolutional network with hand-written gradients.

mod batchnorm;
mod block;
mod conv;
mod model;
mod optim;
mod persist;
mod tensor;
mod train;

use thiserror::Error;

pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormLayer, BatchStats, BnCache, BnGrads};
pub use block::{residual_block_backward, residual_block_forward, BlockCache, BlockGrads, ResidualBlock};
pub use conv::{dilated_causal_conv_backward, dilated_causal_conv_forward, ConvGrads, ConvLayer};
pub use model::{sigmoid, ModelCache, TcnHyper, TcnModel};
pub use optim::{adam_step, mse_loss, AdamConfig, AdamState};
pub use persist::{load_model, save_model, ModelFile, MODEL_FORMAT, MODEL_FORMAT_VERSION};
pub use tensor::Tensor3;
pub use train::{
    dataset_tensors, finalize_batchnorm, train, train_on_dataset, write_loss_trace, EpochLoss, TrainSchedule,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm.
    Train,
    /// Running statistics in batch norm.
    Eval,
}

#[derive(Debug, Error)]
pub enum TcnError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("batch norm needs more than one value per channel in training mode")]
    DegenerateBatch,
    #[error("empty batch")]
    EmptyBatch,
    #[error("no training windows")]
    EmptyDataset,
    #[error("non-finite loss at epoch {epoch}, step {step}")]
    DivergenceDetected {
        epoch: usize,
        step: usize,
        /// Parameters at the moment of divergence.
        model: Box<TcnModel>,
    },
    #[error("corrupt model file: {0}")]
    CorruptModelFile(String),
    #[error("model file format version {found}, expected {expected}")]
    VersionMismatch { found: u64, expected: u64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
