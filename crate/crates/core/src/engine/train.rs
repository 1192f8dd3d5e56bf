use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{augment, batch, split_indices, AugmentSpec, NormStats, Sample};
use crate::diffarray::{Mode, Tape};
use crate::engine::{evaluate, summarize, Adam, AdamConfig, Schedule, ScheduleConfig};
use crate::error::{Error, Result};
use crate::network::SegmentationModel;
use crate::objectives::{dual_loss, DualLossSpec};
use crate::seed;

/// Hard cap on epochs for regular runs.
pub const MAX_EPOCHS: usize = 150;
/// Hard cap when `overfit` is set.
pub const MAX_OVERFIT_EPOCHS: usize = 300;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub schedule: ScheduleConfig,
    /// Share of the training split held out for validation.
    pub val_frac: f64,
    pub augment: bool,
    pub early_stop: bool,
    /// Validate on the training samples and never stop early.
    pub overfit: bool,
    /// Stop once validation Dice reaches this value.
    pub target_dc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: MAX_EPOCHS,
            batch_size: 4,
            adam: AdamConfig::default(),
            schedule: ScheduleConfig::default(),
            val_frac: 0.15,
            augment: true,
            early_stop: true,
            overfit: false,
            target_dc: None,
        }
    }
}

impl TrainConfig {
    pub fn max_epochs(&self) -> usize {
        if self.overfit {
            MAX_OVERFIT_EPOCHS
        } else {
            MAX_EPOCHS
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.epochs > self.max_epochs() {
            return Err(Error::Config(format!(
                "epochs must be in 1..={}, got {}",
                self.max_epochs(),
                self.epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_frac) {
            return Err(Error::Config(format!(
                "val_frac must be in [0, 1), got {}",
                self.val_frac
            )));
        }
        if !(self.adam.lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.adam.lr
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dc: f64,
    pub lr: f64,
}

pub const HISTORY_HEADER: &str = "epoch,train_loss,val_loss,val_dc,lr";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = format!("{HISTORY_HEADER}\n");
    for r in history {
        s.push_str(&format!(
            "{},{},{},{},{}\n",
            r.epoch, r.train_loss, r.val_loss, r.val_dc, r.lr
        ));
    }
    s
}

/// Optimizer and schedule state carried across epochs; also the resume point.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainState {
    pub adam: Adam<f32>,
    pub schedule: Schedule,
    /// Epochs already completed.
    pub epoch: usize,
    /// Last epoch whose validation loss counted as an improvement.
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl TrainState {
    pub fn fresh(model: &dyn SegmentationModel<f32>, cfg: &TrainConfig) -> Self {
        TrainState {
            adam: Adam::new(model.params(), cfg.adam.clone()),
            schedule: Schedule::new(cfg.adam.lr, cfg.schedule.clone()),
            epoch: 0,
            best_epoch: 0,
            history: Vec::new(),
        }
    }
}

/// Everything besides the model and data that determines a run.
#[derive(Clone, Debug)]
pub struct TrainSetup<'a> {
    pub config: &'a TrainConfig,
    pub loss: &'a DualLossSpec,
    pub augment: &'a AugmentSpec,
    pub norm: &'a NormStats,
    pub seed: u64,
}

/// Passed to the observer after every epoch.
pub struct EpochReport<'a> {
    pub record: &'a EpochRecord,
    pub improved: bool,
    pub model: &'a dyn SegmentationModel<f32>,
    pub state: &'a TrainState,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopReason {
    EpochLimit,
    EarlyStop,
    TargetReached,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stop: StopReason,
}

/// Stratified hold-out of `val_frac` of `samples` for validation.
pub fn carve_validation(samples: &[Sample], val_frac: f64, root_seed: u64) -> Result<(Vec<Sample>, Vec<Sample>)> {
    if val_frac == 0.0 {
        return Ok((samples.to_vec(), Vec::new()));
    }
    let metas: Vec<_> = samples.iter().map(|s| s.meta).collect();
    let (keep, held) = split_indices(&metas, 1.0 - val_frac, seed::derive(root_seed, "validation", &[]))?;
    Ok((
        keep.into_iter().map(|i| samples[i].clone()).collect(),
        held.into_iter().map(|i| samples[i].clone()).collect(),
    ))
}

fn train_step(
    model: &mut dyn SegmentationModel<f32>,
    items: &[Sample],
    setup: &TrainSetup<'_>,
    adam: &mut Adam<f32>,
) -> Result<f64> {
    let refs: Vec<&Sample> = items.iter().collect();
    let (images, masks) = batch(&refs)?;
    let mut tape = Tape::new();
    let x = tape.leaf(setup.norm.normalize(&images));
    let out = model.forward(&mut tape, x, Mode::Train)?;
    let loss = dual_loss(&mut tape, &out, &masks, setup.loss)?;
    let value = tape.value(loss.total).item() as f64;
    let updates = tape.take_stat_updates();
    let grads = tape.backward(loss.total)?.for_store(model.params());
    adam.update(model.params_mut(), &grads)?;
    model.params_mut().apply_stat_updates(&updates);
    Ok(value)
}

/// Run one training epoch; returns the sample-weighted mean batch loss.
pub fn train_epoch(
    model: &mut dyn SegmentationModel<f32>,
    train: &[Sample],
    setup: &TrainSetup<'_>,
    adam: &mut Adam<f32>,
    epoch: usize,
) -> Result<f64> {
    let mut order: Vec<usize> = (0..train.len()).collect();
    order.shuffle(&mut seed::rng(seed::derive(setup.seed, "shuffle", &[epoch as u64])));
    let stream = seed::derive(setup.seed, "augment", &[epoch as u64]);
    let mut total = 0.0;
    for chunk in order.chunks(setup.config.batch_size) {
        let items: Vec<Sample> = chunk
            .iter()
            .map(|&i| {
                if setup.config.augment {
                    augment(&train[i], setup.augment, stream)
                } else {
                    train[i].clone()
                }
            })
            .collect();
        total += train_step(model, &items, setup, adam)? * chunk.len() as f64;
    }
    Ok(total / train.len() as f64)
}

/// Train until the epoch limit, early stop or target Dice. The observer
/// sees every finished epoch and typically writes checkpoints.
pub fn train(
    model: &mut dyn SegmentationModel<f32>,
    train_set: &[Sample],
    val_set: &[Sample],
    setup: &TrainSetup<'_>,
    state: &mut TrainState,
    observer: &mut dyn FnMut(&EpochReport<'_>) -> Result<()>,
) -> Result<TrainOutcome> {
    let cfg = setup.config;
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Empty("training set"));
    }
    let val_set = if cfg.overfit && val_set.is_empty() {
        train_set
    } else {
        val_set
    };
    if val_set.is_empty() {
        return Err(Error::Empty("validation set"));
    }
    let mut stop = StopReason::EpochLimit;
    while state.epoch < cfg.epochs {
        let epoch = state.epoch + 1;
        state.adam.lr = state.schedule.lr();
        let train_loss = train_epoch(model, train_set, setup, &mut state.adam, epoch)?;
        let (val_loss, val_dc) = summarize(&evaluate(&*model, val_set, setup.norm, setup.loss)?);
        if !val_loss.is_finite() {
            return Err(Error::NonFinite(format!("validation loss at epoch {epoch}")));
        }
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss,
            val_dc,
            lr: state.adam.lr,
        };
        let ev = state.schedule.update(val_loss);
        state.epoch = epoch;
        if ev.improved {
            state.best_epoch = epoch;
        }
        state.history.push(record.clone());
        observer(&EpochReport {
            record: &record,
            improved: ev.improved,
            model: &*model,
            state,
        })?;
        if cfg.target_dc.is_some_and(|t| val_dc >= t) {
            stop = StopReason::TargetReached;
            break;
        }
        if ev.stop && cfg.early_stop && !cfg.overfit {
            stop = StopReason::EarlyStop;
            break;
        }
    }
    Ok(TrainOutcome {
        history: state.history.clone(),
        best_epoch: state.best_epoch,
        stop,
    })
}
