//! Episodic meta-training and meta-testing.

mod config;
mod engine;
mod model;
mod optim;
mod run;

pub use config::{Profile, SyntheticPool, TrainConfig, CONFIG_SCHEMA_VERSION};
pub use engine::{
    cross_validate, evaluate, fit, fold_partition, holdout_split, mean_ci95, run_single,
    score_episode, spec_fitting, train_episode, CrossValidation, EpochRecord, FitOutcome,
    RunOutcome, RunReport, StepOutcome,
};
pub use model::{
    analytic_gradient, compare_gradients, episode_forward, episode_gradients, grad_check,
    learnable_names, numeric_loss_gradient, EpisodeBatch, EpisodeOutput, GradCheckReport, Model,
};
pub use optim::{lr_at, Adam, OptimizerConfig};
pub use run::{load_model, RunDir, CHECKPOINT_DIR, CONFIG_FILE, HISTORY_FILE, REPORT_FILE};
