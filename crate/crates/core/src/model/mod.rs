//! Small convolutional classifier: configuration, losses, training and
//! checkpoints.

mod checkpoint;
mod config;
mod loss;
mod network;
mod predict;
mod tensor;
mod train;

pub use checkpoint::{Checkpoint, TrainingMetadata, CHECKPOINT_FORMAT};
pub use config::{Activation, LayerSpec, ModelConfig, Volume};
pub use loss::{
    batch_loss, cross_entropy, focal_loss, loss_and_logit_grad, softmax, softmax_row, FocalLossConfig, LossConfig,
    DEFAULT_GAMMA, PROB_FLOOR,
};
pub use network::Network;
pub use predict::{image_tensor, predict_topk, rank_indices};
pub use tensor::Tensor;
pub use train::{train, EpochMetrics, TrainConfig, TrainData};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid loss config: {0}")]
    Loss(String),
    #[error("invalid training setup: {0}")]
    Train(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("checkpoint parameter digest mismatch: header {expected}, computed {actual}")]
    DigestMismatch { expected: String, actual: String },
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}
