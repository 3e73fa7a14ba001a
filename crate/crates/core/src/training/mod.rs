//! Losses, optimizer, stage schedule, the trainer and the plateau scan.

pub mod loss;
pub mod optimizer;
pub mod plateau;
pub mod schedule;
pub mod trainer;

pub use loss::LossWeights;
pub use optimizer::{cosine_lr, optimizer_step, AdamConfig, OptimizerState};
pub use plateau::{plateau_cell, plateau_diagnostic, PlateauConfig, PlateauRow, MIN_SAMPLES};
pub use schedule::{stage_config, Stage, StageConfig, StageSchedule};
pub use trainer::{predict_all, Example, StepMetrics, TrainConfig, TrainState, Trainer};
