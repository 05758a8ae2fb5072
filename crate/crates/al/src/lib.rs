//! Pool-based active learning for airway segmentation: query strategies,
//! the alternating critic / segmenter training loop, held-out evaluation
//! and the checkpointed experiment runner.

pub mod dataset;
pub mod error;
pub mod evaluate;
pub mod experiment;
pub mod query;
pub mod train;

pub use error::{AlError, Result};
pub use experiment::{run_experiment, ExperimentConfig, RoundReport, RunOutcome, StopReason, Summary};
pub use query::{select_batch, QueryScore, Selection, StrategyConfig, StrategyName};
pub use train::{train_epochs, Learner, TrainConfig};
