//! Training losses, evaluation metrics and stratified reporting.

mod loss;
mod metrics;
mod report;

pub use loss::{bce_loss, check_binary, dice_loss, dual_loss, segment_loss, DualLoss, DualLossSpec, BCE_CLAMP};
pub use metrics::{Confusion, Metrics, THRESHOLD};
pub use report::{ModelLabel, SampleScores, StrataGroup, StrataReport, StrataRow, CSV_HEADER};
