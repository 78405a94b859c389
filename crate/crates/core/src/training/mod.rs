//! Anticipation labels, losses, AdamW and the training loop.

mod check;
mod config;
mod labels;
mod logistic;
mod loss;
mod optim;
mod trainer;

pub use check::{check_training_gradient, GradCheckSetup};
pub use config::{parse_key_values, TrainConfig};
pub use labels::{anticipation_labels, frame_labels};
pub use logistic::{LogisticBaseline, LogisticFit};
pub use loss::{
    class_weights, sequence_loss, sequence_loss_and_grad, smoothed_weighted_ce, window_loss, LabeledWindow, LossConfig, WindowObjective, CE_EPS,
};
pub use optim::{adamw_step, cosine_lr, OptimizerState, ADAM_EPS, BETA1, BETA2};
pub use trainer::{
    checkpoint_meta, evaluate_split, infer_classes, segment_counts, thread_pool, train, EpochMetrics, StreamData, TrainOutputs, TrainResult,
    METRICS_HEADER, THREADS_ENV,
};
