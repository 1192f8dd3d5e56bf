//! Reverse-mode differentiation over `(n, c, h, w)` arrays.
//!
//! A [`Tape`] is created per forward pass. Every operation appends a node
//! holding its output and a boxed [`Operation`] that knows how to push an
//! output gradient back to its inputs. [`Tape::backward`] replays the nodes
//! in reverse recorded order exactly once.

mod array;
pub mod ops;
mod tape;

pub use array::{Array4, Shape};
pub use tape::{Gradients, Mode, Operation, StatUpdate, Tape, Var};
