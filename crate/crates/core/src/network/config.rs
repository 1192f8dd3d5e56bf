use serde::{Deserialize, Serialize};

use crate::blocks::DEFAULT_DESCRIPTORS;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MrnConfig {
    /// Number of encoder stages.
    pub depth: usize,
    /// Channels of encoder stage 1; doubles per stage.
    pub base_channels: usize,
    pub in_channels: usize,
    /// Descriptor count of every attention site.
    pub descriptors: usize,
    /// Cascade multi-scale blocks in encoder, bottleneck and main decoder.
    pub msc: bool,
    /// Square input side in pixels.
    pub side: usize,
}

impl Default for MrnConfig {
    fn default() -> Self {
        MrnConfig {
            depth: 4,
            base_channels: 16,
            in_channels: 3,
            descriptors: DEFAULT_DESCRIPTORS,
            msc: true,
            side: 256,
        }
    }
}

impl MrnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.depth > 8 {
            return Err(Error::Config(format!("depth must be in 1..=8, got {}", self.depth)));
        }
        if self.base_channels == 0 || self.in_channels == 0 || self.descriptors == 0 {
            return Err(Error::Config("channel and descriptor counts must be positive".into()));
        }
        self.check_side(self.side)
    }

    pub fn check_side(&self, side: usize) -> Result<()> {
        let unit = 1usize << self.depth;
        if side == 0 || !side.is_multiple_of(unit) {
            return Err(Error::Config(format!(
                "input side {side} is not a positive multiple of 2^depth = {unit}"
            )));
        }
        Ok(())
    }

    /// Channels of encoder stage `i` (1-based).
    pub fn stage_channels(&self, i: usize) -> usize {
        self.base_channels << (i - 1)
    }

    /// Decoder channels at level `l`.
    pub fn level_channels(&self, l: usize) -> usize {
        self.base_channels << l
    }
}
