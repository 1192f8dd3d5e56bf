//! Network assembly.
//!
//! Both architectures implement [`SegmentationModel`] and are constructed by
//! name through the [`ModelRegistry`], so training, evaluation and the CLI
//! select them at runtime.
//!
//! Level `l` denotes spatial resolution `side / 2^l`. Encoder stage `i`
//! (1-based) produces a pre-pool activation at level `i - 1` and a pooled
//! feature `F_i` at level `i`. Decoder features at level `l` carry
//! `base * 2^l` channels.

mod baseline;
mod config;
mod encoder;
mod mrn;
mod registry;

pub use baseline::Baseline;
pub use config::MrnConfig;
pub use encoder::{DoubleConv, Encoded, Encoder, EncoderStage, MscUnit};
pub use mrn::{AepOutput, AepStage, DualOutput, Mrn, OepStage};
pub use registry::{ModelEntry, ModelRegistry};

use crate::diffarray::{Array4, Mode, Tape, Var};
use crate::element::Element;
use crate::error::Result;
use crate::params::ParamStore;

/// Probability maps produced by one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ModelOutput {
    /// Main prediction, `(n, 1, H, W)` in `[0, 1]`.
    pub main: Var,
    /// Auxiliary prediction for models with a second supervised path.
    pub aux: Option<Var>,
}

pub trait SegmentationModel<T: Element>: Send + Sync {
    /// Registry name this model was built under.
    fn kind(&self) -> &'static str;

    fn config(&self) -> &MrnConfig;

    fn params(&self) -> &ParamStore<T>;

    fn params_mut(&mut self) -> &mut ParamStore<T>;

    fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ModelOutput>;

    /// Eval-mode main probability map for a batch.
    fn predict(&self, x: &Array4<T>) -> Result<Array4<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(tape.value(out.main).clone())
    }
}

#[cfg(test)]
mod tests;
