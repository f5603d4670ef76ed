//! Losses, decoding search and the optimization loop.

mod beam;
mod losses;
mod mwer;
mod optim;
mod persist;
mod trainer;

pub use beam::{beam_search, greedy_decode, Hypothesis};
pub use losses::{cross_entropy_label_smoothed, edit_distance};
pub use mwer::{mwer_from_scores, mwer_loss, MwerConfig, MwerOutput};
pub use optim::{AdamConfig, AdamState};
pub use persist::{
    has_train_state, load_train_state, save_train_state, Progress, MODEL_FILE, OPTIMIZER_FILE, PROGRESS_FILE,
};
pub use trainer::{
    decode_tokens, epoch_order, evaluate, run_training, score_logit_grad, targets_of, teacher_forced_error,
    train_step, DecodeMode, EvalReport, MetricsRecord, MetricsWriter, Phase, StepMetrics, TrainConfig, TrainState,
    METRICS_HEADER,
};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum TrainingError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("invalid target: {0}")]
    Target(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
