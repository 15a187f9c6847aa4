//! Experiment orchestration: configuration, training and evaluation loops,
//! checkpoints, metrics files and the comparison studies.

pub mod checkpoint;
pub mod config;
pub mod metrics;
pub mod studies;
pub mod train;

pub use checkpoint::Checkpoint;
pub use config::{preset, ExperimentConfig, ModelKind, Seeds, Subset, PRESET_NAMES};
pub use metrics::EpochMetrics;
pub use train::{evaluate, load_data, run_eval, run_train, train_on, Datasets, EvalResult, EvalSplit, Model, RunContext, TrainReport};
