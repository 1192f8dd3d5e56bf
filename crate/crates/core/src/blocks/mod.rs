//! Feature blocks of the dual-path network.
//!
//! - [`Dspa`]: dense spatial position attention. Every spatial site of the
//!   input attends over a bank of learnable descriptor vectors; the
//!   softmax-weighted descriptor mix is added back onto the site.
//! - [`CascadeMsc`]: 5x5, 3x3 and 1x1 branches fed by cumulative sums of the
//!   input, fused by a pointwise conv over the dense concatenation.

mod dspa;
mod msc;

pub use dspa::{attention_weights, dspa_attend, Dspa, DEFAULT_DESCRIPTORS, DESCRIPTOR_INIT_STD};
pub use msc::CascadeMsc;
