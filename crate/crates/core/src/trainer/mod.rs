//! Training loops, baselines, behaviour-cloning pretraining and evaluation.

mod config;
pub mod demo;
mod eval;
mod pretrain;
mod train;

pub use config::{Algorithm, TrainConfig};
pub use demo::{demo_corpus, demonstrate, DemoNoise};
pub use eval::{evaluate_policy, evaluate_with_rollouts, goal_completion, EvalReport, TaskRecord};
pub use pretrain::{clone_pretrain, pretrain_in_band, PretrainConfig, PretrainOutcome, TokenDataset};
pub use train::{
    ei_train, prepare_buffer, rft_train, select_best, train, train_with, update_phase, Checkpoint, IterationMetrics,
    TaskSplits, TrainReport, TrainState, UpdateStats,
};
