//! Hybrid loss, optimizer, schedule, early stopping and the training loops.

mod loss;
mod optim;
mod trainer;

pub use loss::{bce_loss, dice_loss, hybrid_loss, LossConfig, LossOutput};
pub use optim::{
    adam_step, cosine_lr, early_stop_update, AdamConfig, AdamState, EarlyStopState, ScheduleConfig, StopDecision,
};
pub use trainer::{
    batch_tensors, collect_slices, evaluation_loss, train_dual, train_model, train_model_observed, DualOutcome,
    EpochRecord, SliceConfig, TrainConfig, TrainOutcome, TrainReport, TrainSeeds,
};
