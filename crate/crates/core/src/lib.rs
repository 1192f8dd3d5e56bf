//! Dual-decoder lesion segmentation.
//!
//! The crate is organised bottom-up:
//!
//! - [`diffarray`]: a small reverse-mode engine over 4-D arrays.
//! - [`layers`]: convolutions, transposed convolution, pooling and batch norm.
//! - [`blocks`]: dense spatial position attention and the cascade multi-scale block.
//! - [`network`]: the dual-path network, the single-path baseline and the model registry.
//! - [`objectives`]: losses, overlap metrics and stratified reports.
//! - [`data`]: samples, the synthetic generator, splitting, augmentation, normalisation.
//! - [`engine`]: Adam, the plateau schedule, training, checkpoints and gradient checks.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod blocks;
pub mod data;
pub mod diffarray;
pub mod element;
pub mod engine;
pub mod error;
pub mod layers;
pub mod network;
pub mod objectives;
pub mod params;
pub mod seed;

pub use diffarray::{Array4, Shape, Tape, Var};
pub use element::Element;
pub use error::{Error, Result};
pub use params::{ParamId, ParamStore};
