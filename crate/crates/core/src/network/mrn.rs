use rand::Rng;

use crate::blocks::Dspa;
use crate::diffarray::ops::{concat_channels, relu, sigmoid};
use crate::diffarray::{Array4, Mode, Tape, Var};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::layers::{Conv2d, ConvSpec, TransConv2d, TransConvSpec};
use crate::network::{Encoded, Encoder, ModelOutput, MrnConfig, MscUnit, SegmentationModel};
use crate::params::ParamStore;
use crate::seed;

/// Value-level pair of maps from one MRN pass.
#[derive(Clone, Debug)]
pub struct DualOutput<T> {
    pub aux_map: Array4<T>,
    pub main_map: Array4<T>,
}

/// One auxiliary-path step from level `l` to `l - 1`.
#[derive(Clone, Debug)]
pub struct AepStage {
    pub level: usize,
    pub fuse: Conv2d,
    pub up: TransConv2d,
    pub dspa: Dspa,
    pub restore: Conv2d,
}

/// One main-path step from level `l` to `l - 1`.
#[derive(Clone, Debug)]
pub struct OepStage {
    pub level: usize,
    pub fuse: Conv2d,
    pub up: TransConv2d,
    pub msc: Option<MscUnit>,
}

/// Auxiliary path activations, finest level last.
#[derive(Clone, Debug)]
pub struct AepOutput {
    /// Attended features at levels `depth - 1, ..., 0`.
    pub features: Vec<Var>,
    pub map: Var,
}

/// Melanoma recognition network with auxiliary and original expansive paths.
pub struct Mrn<T: Element> {
    cfg: MrnConfig,
    store: ParamStore<T>,
    pub encoder: Encoder,
    /// Ordered from the bottom level upward.
    pub aep: Vec<AepStage>,
    pub aep_head: Conv2d,
    pub oep: Vec<OepStage>,
    pub oep_head: Conv2d,
}

impl<T: Element> Mrn<T> {
    pub fn new(cfg: &MrnConfig, root_seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seed::rng(seed::derive(root_seed, "init", &[]));
        let mut store = ParamStore::new();
        let encoder = Encoder::new(&mut store, cfg, cfg.msc, &mut rng)?;
        let aep = (1..=cfg.depth)
            .rev()
            .enumerate()
            .map(|(j, l)| aep_stage(&mut store, cfg, j + 1, l, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let aep_head = Conv2d::new(
            &mut store,
            "aep.head",
            ConvSpec::new(1, cfg.base_channels, 1)?,
            &mut rng,
        );
        let oep = (1..=cfg.depth)
            .rev()
            .enumerate()
            .map(|(j, l)| oep_stage(&mut store, cfg, j + 1, l, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let oep_head = Conv2d::new(
            &mut store,
            "oep.head",
            ConvSpec::new(1, cfg.base_channels, 1)?,
            &mut rng,
        );
        Ok(Mrn {
            cfg: cfg.clone(),
            store,
            encoder,
            aep,
            aep_head,
            oep,
            oep_head,
        })
    }

    pub fn encode(&self, tape: &mut Tape<T>, x: Var, mode: Mode) -> Result<Encoded> {
        self.encoder.forward(tape, &self.store, x, mode)
    }

    pub fn decode_aep(&self, tape: &mut Tape<T>, enc: &Encoded) -> Result<AepOutput> {
        check_stages("aep", enc, self.aep.len())?;
        let mut prev = enc.bottom;
        let mut features = Vec::with_capacity(self.aep.len());
        for stage in &self.aep {
            let l = stage.level;
            let cat = concat_channels(tape, &[prev, enc.pooled[l - 1]])?;
            let h = stage.fuse.forward(tape, &self.store, cat)?;
            let h = relu(tape, h)?;
            let up = stage.up.forward(tape, &self.store, h)?;
            let m = concat_channels(tape, &[up, enc.skips[l - 1]])?;
            let o = stage.dspa.forward(tape, &self.store, m)?;
            let r = stage.restore.forward(tape, &self.store, o)?;
            prev = relu(tape, r)?;
            features.push(prev);
        }
        let logits = self.aep_head.forward(tape, &self.store, prev)?;
        let map = sigmoid(tape, logits)?;
        Ok(AepOutput { features, map })
    }

    pub fn decode_oep(&self, tape: &mut Tape<T>, enc: &Encoded, aep: &AepOutput, mode: Mode) -> Result<Var> {
        check_stages("oep", enc, self.oep.len())?;
        if aep.features.len() != self.oep.len() {
            return Err(Error::InvalidShape {
                op: "oep",
                reason: format!(
                    "auxiliary path has {} stages, main path has {}",
                    aep.features.len(),
                    self.oep.len()
                ),
            });
        }
        let mut prev = enc.bottom;
        for (j, stage) in self.oep.iter().enumerate() {
            let aux = if j == 0 { enc.bottom } else { aep.features[j - 1] };
            let cat = concat_channels(tape, &[prev, aux, enc.pooled[stage.level - 1]])?;
            let h = stage.fuse.forward(tape, &self.store, cat)?;
            let h = relu(tape, h)?;
            let up = stage.up.forward(tape, &self.store, h)?;
            prev = match &stage.msc {
                Some(m) => m.forward(tape, &self.store, up, mode)?,
                None => up,
            };
        }
        let logits = self.oep_head.forward(tape, &self.store, prev)?;
        sigmoid(tape, logits)
    }

    /// Eval-mode pass returning both maps.
    pub fn infer(&self, x: &Array4<T>) -> Result<DualOutput<T>> {
        let mut tape = Tape::new();
        let xv = tape.leaf(x.clone());
        let out = self.forward(&mut tape, xv, Mode::Eval)?;
        Ok(DualOutput {
            aux_map: tape.value(out.aux.expect("mrn has an auxiliary head")).clone(),
            main_map: tape.value(out.main).clone(),
        })
    }
}

fn check_stages(op: &'static str, enc: &Encoded, stages: usize) -> Result<()> {
    if enc.pooled.len() != stages || enc.skips.len() != stages {
        return Err(Error::InvalidShape {
            op,
            reason: format!("encoder produced {} stages, decoder expects {stages}", enc.pooled.len()),
        });
    }
    Ok(())
}

fn aep_stage<T: Element>(
    store: &mut ParamStore<T>,
    cfg: &MrnConfig,
    j: usize,
    l: usize,
    rng: &mut impl Rng,
) -> Result<AepStage> {
    let p = format!("aep.stage{j}");
    let (nom, below) = (cfg.level_channels(l), cfg.level_channels(l - 1));
    let cin = nom + cfg.stage_channels(l);
    Ok(AepStage {
        level: l,
        fuse: Conv2d::new(store, &format!("{p}.fuse"), ConvSpec::new(1, cin, nom)?, rng),
        up: TransConv2d::new(store, &format!("{p}.up"), TransConvSpec::new(nom, below)?, rng),
        dspa: Dspa::new(store, &format!("{p}.dspa"), 2 * below, cfg.descriptors, rng)?,
        restore: Conv2d::new(store, &format!("{p}.restore"), ConvSpec::new(1, 2 * below, below)?, rng),
    })
}

fn oep_stage<T: Element>(
    store: &mut ParamStore<T>,
    cfg: &MrnConfig,
    j: usize,
    l: usize,
    rng: &mut impl Rng,
) -> Result<OepStage> {
    let p = format!("oep.stage{j}");
    let (nom, below) = (cfg.level_channels(l), cfg.level_channels(l - 1));
    let cin = 2 * nom + cfg.stage_channels(l);
    let msc = if cfg.msc {
        Some(MscUnit::new(store, &p, below, rng)?)
    } else {
        None
    };
    Ok(OepStage {
        level: l,
        fuse: Conv2d::new(store, &format!("{p}.fuse"), ConvSpec::new(1, cin, nom)?, rng),
        up: TransConv2d::new(store, &format!("{p}.up"), TransConvSpec::new(nom, below)?, rng),
        msc,
    })
}

impl<T: Element> SegmentationModel<T> for Mrn<T> {
    fn kind(&self) -> &'static str {
        "ddsl"
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
        let enc = self.encode(tape, x, mode)?;
        let aep = self.decode_aep(tape, &enc)?;
        let main = self.decode_oep(tape, &enc, &aep, mode)?;
        Ok(ModelOutput {
            main,
            aux: Some(aep.map),
        })
    }
}
