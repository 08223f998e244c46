//! Training phases, optimizer, learning-rate schedule and loss logging.

mod config;
mod optim;
mod schedule;
mod trainer;

pub use config::{Phase, Precision, TrainConfig};
pub use optim::{Adam, ADAM_EPS};
pub use schedule::LrSchedule;
pub use trainer::{
    read_loss_log, train, train_joint, train_segmenter, train_stage1, train_stage2,
    write_loss_log, LossRecord, TrainOutcome, COLLAPSE_STEPS, COLLAPSE_THRESHOLD,
};

/// Learning rate at `iteration` under `cfg`'s schedule.
pub fn lr_at(iteration: u64, cfg: &TrainConfig) -> crate::Result<f64> {
    cfg.schedule()?.lr_at(iteration)
}
