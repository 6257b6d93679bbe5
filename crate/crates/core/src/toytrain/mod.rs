//! A small dense network trained by hand-written backpropagation, plus the
//! selective fine-tuning forgetting experiment built on it.
//!
//! The optimizer is plain mini-batch gradient descent.

mod data;
mod experiment;
mod mlp;
mod train;

pub use data::{make_synthetic_task, Dataset, SyntheticTask, TaskData, TaskKind, BLOB_SPREAD, TEACHER_HIDDEN};
pub use experiment::{
    budget_from_fraction, forgetting_experiment, median, ForgettingConfig, ForgettingOutcome, ForgettingReport,
    RunPlan, RunRecord, StrategyMedians, INSUFFICIENT_SEEDS_FLAG, MIN_SEEDS_FOR_MEDIAN,
};
pub use mlp::{bias_name, build_mlp, weight_name, Gradients, LossKind, MlpModel};
pub use train::{evaluate, train_task, TrainHyper, TrainReport};
