use crate::diffarray::ops::{concat_channels, relu, sigmoid};
use crate::diffarray::{Mode, Tape, Var};
use crate::element::Element;
use crate::error::Result;
use crate::layers::{Conv2d, ConvSpec, TransConv2d, TransConvSpec};
use crate::network::{Encoder, ModelOutput, MrnConfig, SegmentationModel};
use crate::params::ParamStore;
use crate::seed;

#[derive(Clone, Debug)]
pub struct DecoderStage {
    pub level: usize,
    pub fuse: Conv2d,
    pub up: TransConv2d,
}

/// Single-path encoder-decoder used as the comparison model.
///
/// Shares the encoder layout with [`Mrn`](crate::network::Mrn) but never uses
/// multi-scale blocks or attention, and has one head.
pub struct Baseline<T: Element> {
    cfg: MrnConfig,
    store: ParamStore<T>,
    pub encoder: Encoder,
    pub decoder: Vec<DecoderStage>,
    pub head: Conv2d,
}

impl<T: Element> Baseline<T> {
    pub fn new(cfg: &MrnConfig, root_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::derive(root_seed, "init", &[]));
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg, false, &mut rng)?;
        let mut decoder = Vec::with_capacity(cfg.depth);
        for (j, l) in (1..=cfg.depth).rev().enumerate() {
            let p = format!("decoder.stage{}", j + 1);
            let nom = cfg.level_channels(l);
            let cin = nom + cfg.stage_channels(l);
            decoder.push(DecoderStage {
                level: l,
                fuse: Conv2d::new(&mut store, &format!("{p}.fuse"), ConvSpec::new(1, cin, nom)?, &mut rng),
                up: TransConv2d::new(
                    &mut store,
                    &format!("{p}.up"),
                    TransConvSpec::new(nom, cfg.level_channels(l - 1))?,
                    &mut rng,
                ),
            });
        }
        let head = Conv2d::new(
            &mut store,
            "decoder.head",
            ConvSpec::new(1, cfg.base_channels, 1)?,
            &mut rng,
        );
        Ok(Baseline {
            cfg: cfg.clone(),
            store,
            encoder,
            decoder,
            head,
        })
    }
}

impl<T: Element> SegmentationModel<T> for Baseline<T> {
    fn kind(&self) -> &'static str {
        "baseline"
    }

    fn config(&self) -> &MrnConfig {
        &self.cfg
    }

    fn params(&self) -> &ParamStore<T> {
        &self.store
    }

    fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.store
    }

    fn forward(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<ModelOutput> {
        let enc = self.encoder.forward(tape, &self.store, x, mode)?;
        let mut prev = enc.bottom;
        for stage in &self.decoder {
            let cat = concat_channels(tape, &[prev, enc.pooled[stage.level - 1]])?;
            let h = stage.fuse.forward(tape, &self.store, cat)?;
            let h = relu(tape, h)?;
            prev = stage.up.forward(tape, &self.store, h)?;
        }
        let logits = self.head.forward(tape, &self.store, prev)?;
        Ok(ModelOutput {
            main: sigmoid(tape, logits)?,
            aux: None,
        })
    }
}
