//! Training loop: batch assembly, blur-level lookup, loss, tracker and
//! radius updates, AdamW, early stopping and checkpoints.

pub mod adamw;
pub mod checkpoint;
pub mod config;
pub mod trainer;

pub use adamw::{adamw_step, AdamWState};
pub use checkpoint::Checkpoint;
pub use config::{Mode, TrainConfig};
pub use trainer::{fit, leave_one_subject_out, train_epoch, EpochLog, FitResult, LogRecord, PairSet, RunHeader, TrainState};
