//! Synthetic benchmark, frozen features, training, evaluation and the
//! ablation runner.

pub mod ablation;
pub mod config;
pub mod data;
pub mod eval;
pub mod model;
pub mod rng;
pub mod train;

pub use config::{RunConfig, SeedMining};
pub use data::{gen_dataset, Dataset, PreparedScene, SyntheticScene};
pub use eval::{evaluate, evaluate_with, format_detections, Evaluation, MetricsDoc, ScoreSource};
pub use model::Model;
pub use train::{train, train_observed, LogLine, TrainOutcome};
