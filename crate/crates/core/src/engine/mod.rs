//! Optimisation, training loop, evaluation, checkpoints and gradient checks.

mod adam;
pub mod checkpoint;
mod evaluate;
pub mod gradcheck;
mod schedule;
mod train;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::Checkpoint;
pub use evaluate::{evaluate, predict_maps, summarize, SampleEval};
pub use gradcheck::{model_gradcheck, GradReport, GradTolerance, GradcheckOutcome};
pub use schedule::{Schedule, ScheduleConfig, ScheduleEvent};
pub use train::{
    carve_validation, history_csv, train, train_epoch, EpochRecord, EpochReport, StopReason, TrainConfig, TrainOutcome,
    TrainSetup, TrainState, HISTORY_HEADER, MAX_EPOCHS, MAX_OVERFIT_EPOCHS,
};
