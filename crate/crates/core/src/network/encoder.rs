use rand::Rng;

use crate::blocks::CascadeMsc;
use crate::diffarray::ops::relu;
use crate::diffarray::{Mode, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{maxpool2, BatchNorm2d, Conv2d, ConvSpec};
use crate::network::MrnConfig;
use crate::params::ParamStore;

/// `[conv3x3 -> BN -> ReLU] x 2`. The convolutions carry no bias.
#[derive(Clone, Debug)]
pub struct DoubleConv {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
}

impl DoubleConv {
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(DoubleConv {
            conv1: Conv2d::without_bias(store, &format!("{prefix}.conv1"), ConvSpec::new(3, cin, cout)?, rng),
            bn1: BatchNorm2d::new(store, &format!("{prefix}.bn1"), cout),
            conv2: Conv2d::without_bias(store, &format!("{prefix}.conv2"), ConvSpec::new(3, cout, cout)?, rng),
            bn2: BatchNorm2d::new(store, &format!("{prefix}.bn2"), cout),
        })
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv1.forward(tape, store, x)?;
        let h = self.bn1.forward(tape, store, h, mode)?;
        let h = relu(tape, h)?;
        let h = self.conv2.forward(tape, store, h)?;
        let h = self.bn2.forward(tape, store, h, mode)?;
        relu(tape, h)
    }
}

/// `CascadeMsc -> BN -> ReLU`, with no bias on the fusion conv.
#[derive(Clone, Debug)]
pub struct MscUnit {
    pub msc: CascadeMsc,
    pub bn: BatchNorm2d,
}

impl MscUnit {
    /// Parameters are named `{prefix}.msc.*` and `{prefix}.msc_bn.*`.
    pub fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        channels: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        Ok(MscUnit {
            msc: CascadeMsc::without_fuse_bias(store, &format!("{prefix}.msc"), channels, channels, rng)?,
            bn: BatchNorm2d::new(store, &format!("{prefix}.msc_bn"), channels),
        })
    }

    pub fn param_count(&self) -> usize {
        self.msc.param_count() + self.bn.param_count()
    }

    pub fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.msc.forward(tape, store, x)?;
        let h = self.bn.forward(tape, store, h, mode)?;
        relu(tape, h)
    }
}

/// Double conv optionally followed by an [`MscUnit`].
#[derive(Clone, Debug)]
pub struct EncoderStage {
    pub conv: DoubleConv,
    pub msc: Option<MscUnit>,
}

impl EncoderStage {
    fn new<T: Element>(
        store: &mut ParamStore<T>,
        prefix: &str,
        cin: usize,
        cout: usize,
        msc: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = DoubleConv::new(store, prefix, cin, cout, rng)?;
        let msc = if msc {
            Some(MscUnit::new(store, prefix, cout, rng)?)
        } else {
            None
        };
        Ok(EncoderStage { conv, msc })
    }

    fn forward<T: Element>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var, mode: Mode) -> Result<Var> {
        let h = self.conv.forward(tape, store, x, mode)?;
        match &self.msc {
            Some(m) => m.forward(tape, store, h, mode),
            None => Ok(h),
        }
    }
}

/// Encoder activations consumed by the decoders.
#[derive(Clone, Debug)]
pub struct Encoded {
    /// Pre-pool activation of stage `i` at index `i - 1` (level `i - 1`).
    pub skips: Vec<Var>,
    /// Pooled feature `F_i` at index `i - 1` (level `i`).
    pub pooled: Vec<Var>,
    /// Bottleneck output at level `depth`.
    pub bottom: Var,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stages: Vec<EncoderStage>,
    pub bottleneck: EncoderStage,
}

impl Encoder {
    pub fn new<T: Element>(store: &mut ParamStore<T>, cfg: &MrnConfig, msc: bool, rng: &mut impl Rng) -> Result<Self> {
        let mut stages = Vec::with_capacity(cfg.depth);
        let mut cin = cfg.in_channels;
        for i in 1..=cfg.depth {
            let cout = cfg.stage_channels(i);
            stages.push(EncoderStage::new(
                store,
                &format!("encoder.stage{i}"),
                cin,
                cout,
                msc,
                rng,
            )?);
            cin = cout;
        }
        let bottleneck = EncoderStage::new(store, "bottleneck", cin, cfg.level_channels(cfg.depth), msc, rng)?;
        Ok(Encoder { stages, bottleneck })
    }

    pub fn forward<T: Element>(
        &self,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        x: Var,
        mode: Mode,
    ) -> Result<Encoded> {
        let s = tape.shape(x);
        if s.h != s.w {
            return Err(Error::InvalidShape {
                op: "encode",
                reason: format!("input must be square, got {s}"),
            });
        }
        let unit = 1usize << self.stages.len();
        if !s.h.is_multiple_of(unit) {
            return Err(Error::InvalidShape {
                op: "encode",
                reason: format!("side {} not divisible by {unit}", s.h),
            });
        }
        let mut skips = Vec::with_capacity(self.stages.len());
        let mut pooled = Vec::with_capacity(self.stages.len());
        let mut h = x;
        for stage in &self.stages {
            let a = stage.forward(tape, store, h, mode)?;
            skips.push(a);
            h = maxpool2(tape, a)?;
            pooled.push(h);
        }
        let bottom = self.bottleneck.forward(tape, store, h, mode)?;
        Ok(Encoded { skips, pooled, bottom })
    }
}
