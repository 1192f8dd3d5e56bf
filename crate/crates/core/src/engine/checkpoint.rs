//! Binary checkpoint container.
//!
//! Layout: the magic `MRN1`, a little-endian `u32` format version, a
//! little-endian `u64` header length, the JSON header, then every tensor as
//! little-endian `f32` in manifest order. Offsets in the manifest are byte
//! offsets from the start of the payload.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::NormStats;
use crate::diffarray::{Array4, Shape};
use crate::engine::{Adam, AdamConfig, EpochRecord, Schedule, TrainState};
use crate::error::{Error, Result};
use crate::network::{ModelRegistry, MrnConfig, SegmentationModel};

pub const MAGIC: &[u8; 4] = b"MRN1";
pub const VERSION: u32 = 1;

const MOMENT1: &str = "adam.m.";
const MOMENT2: &str = "adam.v.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: [usize; 4],
    pub offset: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub lr: f64,
    pub step: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    model: String,
    network: MrnConfig,
    epoch: usize,
    best_epoch: usize,
    stats_ready: bool,
    optimizer: OptimizerHeader,
    schedule: Schedule,
    norm: NormStats,
    history: Vec<EpochRecord>,
    run: Option<serde_json::Value>,
    tensors: Vec<TensorEntry>,
}

/// In-memory checkpoint: model tensors (parameters and running statistics)
/// followed by the optimizer moments of each trainable tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: String,
    pub network: MrnConfig,
    pub epoch: usize,
    pub best_epoch: usize,
    pub stats_ready: bool,
    pub optimizer: OptimizerHeader,
    pub schedule: Schedule,
    pub norm: NormStats,
    pub history: Vec<EpochRecord>,
    /// Resolved run configuration, stored verbatim.
    pub run: Option<serde_json::Value>,
    pub tensors: Vec<(String, Array4<f32>)>,
}

impl Checkpoint {
    pub fn capture(
        model: &dyn SegmentationModel<f32>,
        state: &TrainState,
        norm: &NormStats,
        run: Option<serde_json::Value>,
    ) -> Self {
        let store = model.params();
        let mut tensors: Vec<(String, Array4<f32>)> =
            store.iter().map(|(_, e)| (e.name.clone(), e.value.clone())).collect();
        for ((_, e), slot) in store.iter().zip(&state.adam.moments) {
            if let Some((m, v)) = slot {
                let s = e.value.shape();
                tensors.push((
                    format!("{MOMENT1}{}", e.name),
                    Array4::from_vec(s, m.clone()).expect("moment shape"),
                ));
                tensors.push((
                    format!("{MOMENT2}{}", e.name),
                    Array4::from_vec(s, v.clone()).expect("moment shape"),
                ));
            }
        }
        Checkpoint {
            model: model.kind().to_string(),
            network: model.config().clone(),
            epoch: state.epoch,
            best_epoch: state.best_epoch,
            stats_ready: store.stats_ready(),
            optimizer: OptimizerHeader {
                config: state.adam.config.clone(),
                lr: state.adam.lr,
                step: state.adam.step,
            },
            schedule: state.schedule.clone(),
            norm: norm.clone(),
            history: state.history.clone(),
            run,
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0u64;
        let manifest = self
            .tensors
            .iter()
            .map(|(name, a)| {
                let e = TensorEntry {
                    name: name.clone(),
                    shape: a.shape().dims(),
                    offset,
                };
                offset += 4 * a.shape().len() as u64;
                e
            })
            .collect();
        let header = Header {
            model: self.model.clone(),
            network: self.network.clone(),
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            stats_ready: self.stats_ready,
            optimizer: self.optimizer.clone(),
            schedule: self.schedule.clone(),
            norm: self.norm.clone(),
            history: self.history.clone(),
            run: self.run.clone(),
            tensors: manifest,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, a) in &self.tensors {
            for v in a.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 16 || &bytes[..4] != MAGIC {
            return Err(bad("missing MRN1 magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version}, expected {VERSION}"
            )));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let json = bytes.get(16..16 + len).ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(json)?;
        let payload = &bytes[16 + len..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        let mut expected = 0u64;
        for e in &header.tensors {
            let shape = Shape::from_dims(e.shape);
            if e.offset != expected {
                return Err(Error::Checkpoint(format!(
                    "tensor {} at offset {}, expected {expected}",
                    e.name, e.offset
                )));
            }
            let start = e.offset as usize;
            let end = start + 4 * shape.len();
            let raw = payload
                .get(start..end)
                .ok_or_else(|| Error::Checkpoint(format!("payload truncated in {}", e.name)))?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            tensors.push((e.name.clone(), Array4::from_vec(shape, data)?));
            expected = end as u64;
        }
        if expected as usize != payload.len() {
            return Err(bad("trailing bytes after payload"));
        }
        Ok(Checkpoint {
            model: header.model,
            network: header.network,
            epoch: header.epoch,
            best_epoch: header.best_epoch,
            stats_ready: header.stats_ready,
            optimizer: header.optimizer,
            schedule: header.schedule,
            norm: header.norm,
            history: header.history,
            run: header.run,
            tensors,
        })
    }

    /// Written through a temporary file so a crash never leaves a partial
    /// checkpoint at `path`.
    pub fn save(&self, path: &Path) -> Result<()> {
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.to_bytes()?)?;
        fs::rename(&tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }

    fn model_tensors(&self) -> impl Iterator<Item = &(String, Array4<f32>)> {
        self.tensors
            .iter()
            .filter(|(n, _)| !n.starts_with(MOMENT1) && !n.starts_with(MOMENT2))
    }

    /// Compare the stored manifest with `model`'s tensors.
    pub fn check_manifest(&self, model: &dyn SegmentationModel<f32>) -> Result<()> {
        let stored: Vec<&(String, Array4<f32>)> = self.model_tensors().collect();
        let store = model.params();
        let mut diffs = Vec::new();
        let mut first = None;
        for (i, (_, e)) in store.iter().enumerate() {
            let want = (e.name.as_str(), e.value.shape());
            match stored.get(i) {
                Some((n, a)) if n == want.0 && a.shape() == want.1 => {}
                Some((n, a)) => {
                    first.get_or_insert_with(|| n.clone());
                    diffs.push(format!("{n} {} vs model {} {}", a.shape(), want.0, want.1));
                }
                None => {
                    first.get_or_insert_with(|| want.0.to_string());
                    diffs.push(format!("missing {} {}", want.0, want.1));
                }
            }
        }
        for (n, a) in stored.iter().skip(store.len()) {
            first.get_or_insert_with(|| n.clone());
            diffs.push(format!("unexpected {n} {}", a.shape()));
        }
        match first {
            None => Ok(()),
            Some(name) => {
                let shown: Vec<String> = diffs.iter().take(8).cloned().collect();
                let more = diffs.len().saturating_sub(shown.len());
                let mut detail = shown.join("; ");
                if more > 0 {
                    detail.push_str(&format!("; and {more} more"));
                }
                Err(Error::ManifestMismatch { name, detail })
            }
        }
    }

    /// Copy stored tensors into `model` after a manifest check.
    pub fn restore_model(&self, model: &mut dyn SegmentationModel<f32>) -> Result<()> {
        self.check_manifest(model)?;
        let ids: Vec<_> = model.params().iter().map(|(id, _)| id).collect();
        for (id, (_, a)) in ids.into_iter().zip(self.model_tensors()) {
            *model.params_mut().value_mut(id) = a.clone();
        }
        if self.stats_ready {
            model.params_mut().mark_stats_ready();
        }
        Ok(())
    }

    /// Build the stored architecture through `registry` and load it.
    pub fn build_model(&self, registry: &ModelRegistry<f32>) -> Result<Box<dyn SegmentationModel<f32>>> {
        let mut m = registry.build(&self.model, &self.network, 0)?;
        self.restore_model(m.as_mut())?;
        Ok(m)
    }

    /// Optimizer and schedule state for resuming into `model`.
    pub fn train_state(&self, model: &dyn SegmentationModel<f32>) -> Result<TrainState> {
        self.check_manifest(model)?;
        let mut adam = Adam::new(model.params(), self.optimizer.config.clone());
        adam.lr = self.optimizer.lr;
        adam.step = self.optimizer.step;
        let find = |name: String| {
            self.tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, a)| a.data().to_vec())
                .ok_or_else(|| Error::ManifestMismatch {
                    name,
                    detail: "optimizer moment missing".into(),
                })
        };
        for ((_, e), slot) in model.params().iter().zip(adam.moments.iter_mut()) {
            if let Some((m, v)) = slot {
                *m = find(format!("{MOMENT1}{}", e.name))?;
                *v = find(format!("{MOMENT2}{}", e.name))?;
            }
        }
        Ok(TrainState {
            adam,
            schedule: self.schedule.clone(),
            epoch: self.epoch,
            best_epoch: self.best_epoch,
            history: self.history.clone(),
        })
    }
}
