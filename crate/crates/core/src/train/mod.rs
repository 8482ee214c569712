//! Loss, optimizer, augmentation, configuration, checkpoints and the
//! training loop.

pub mod augment;
pub mod checkpoint;
pub mod config;
pub mod loss;
pub mod optim;
pub mod trainer;

pub use checkpoint::Checkpoint;
pub use config::TrainConfig;
pub use loss::{total_loss, LossBreakdown};
pub use trainer::{prepare, train, train_prepared, EpochMetrics, Prepared, TrainOutcome};
