//! Optimisation, evaluation metrics, the epoch loop and checkpoints.

mod checkpoint;
mod fit;
mod metrics;
mod optim;

pub use checkpoint::{checkpoint_bytes, load_checkpoint, parse_checkpoint, save_checkpoint, Checkpoint};
pub use fit::{
    evaluate, log_row, train, train_step, train_with, write_log, EpochLog, StepReport, TrainConfig, TrainOutcome,
    LOG_HEADER,
};
pub use metrics::{metrics, MetricAccumulator, MetricReport, DEFAULT_MAPE_THRESHOLD};
pub use optim::{default_milestones, Adam, AdamConfig, Milestone};
