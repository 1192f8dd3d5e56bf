//! Samples, synthetic data, on-disk ingestion, splitting, augmentation and
//! normalisation.

mod augment;
pub mod io;
mod meta;
mod normalize;
mod sample;
mod split;
mod synth;

pub use augment::{apply, augment, warp_affine, warp_elastic, AugmentDraw, AugmentSpec};
pub use meta::{parse_cell, AgeGroup, Gender, Meta, Region, SkinTone};
pub use normalize::{NormStats, VAR_FLOOR};
pub use sample::{batch, Sample};
pub use split::{cell_quota, split_indices, split_stratified};
pub use synth::synth_dataset;
