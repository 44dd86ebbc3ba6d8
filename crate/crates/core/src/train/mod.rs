//! Losses, the optimization step, the staged training loop and checkpoints.

pub mod checkpoint;
pub mod losses;
pub mod schedule;
pub mod step;
pub mod trainer;

pub use checkpoint::{
    load_checkpoint, load_checkpoint_expecting, load_checkpoint_file, read_checkpoint_header,
    save_checkpoint, save_checkpoint_file, CheckpointHeader,
};
pub use losses::{build_losses, compute_losses, Batch, LossBreakdown, LossGraph, LossWeights, Terms};
pub use schedule::{Stage, StageSchedule, TrainConfig, STAGE_NAMES};
pub use step::{train_step, StepOutcome};
pub use trainer::{
    checkpoint_name, train, MetricsRow, TrainRun, TrainSummary, Trainer, FINAL_CHECKPOINT, METRICS_FILE,
    METRICS_HEADER,
};
