use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Non-improving epochs before the learning rate is halved.
    pub plateau_patience: usize,
    /// Non-improving epochs before training stops.
    pub stop_patience: usize,
    pub decay_factor: f64,
    /// Minimum decrease of the validation loss that counts as improvement.
    pub min_delta: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        ScheduleConfig {
            plateau_patience: 10,
            stop_patience: 20,
            decay_factor: 0.5,
            min_delta: 1e-4,
        }
    }
}

/// Plateau learning-rate decay with early stopping.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub config: ScheduleConfig,
    pub base_lr: f64,
    /// `None` until the first update.
    pub best: Option<f64>,
    /// Epochs since the last improvement; drives early stopping.
    pub since_best: usize,
    /// Epochs since the last improvement or decay; drives decay.
    pub since_decay: usize,
    pub decays: u32,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScheduleEvent {
    pub improved: bool,
    pub decayed: bool,
    pub stop: bool,
}

impl Schedule {
    pub fn new(base_lr: f64, config: ScheduleConfig) -> Self {
        Schedule {
            config,
            base_lr,
            best: None,
            since_best: 0,
            since_decay: 0,
            decays: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.base_lr * self.config.decay_factor.powi(self.decays as i32)
    }

    pub fn update(&mut self, val_loss: f64) -> ScheduleEvent {
        let mut ev = ScheduleEvent::default();
        let improved = match self.best {
            None => true,
            Some(b) => b - val_loss > self.config.min_delta,
        };
        if improved {
            self.best = Some(val_loss);
            self.since_best = 0;
            self.since_decay = 0;
            ev.improved = true;
            return ev;
        }
        self.since_best += 1;
        self.since_decay += 1;
        if self.since_decay >= self.config.plateau_patience {
            self.decays += 1;
            self.since_decay = 0;
            ev.decayed = true;
        }
        ev.stop = self.since_best >= self.config.stop_patience;
        ev
    }
}
