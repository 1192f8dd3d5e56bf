use serde::{Deserialize, Serialize};

use crate::element::Element;
use crate::error::{Error, Result};

/// Probabilities at or above this value count as lesion.
pub const THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    /// Counts after thresholding `pred` at [`THRESHOLD`]; `target` must be binary.
    pub fn from_maps<T: Element>(pred: &[T], target: &[T]) -> Result<Self> {
        if pred.len() != target.len() {
            return Err(Error::Data(format!(
                "prediction has {} pixels, target has {}",
                pred.len(),
                target.len()
            )));
        }
        let thr = T::from_f64_lossy(THRESHOLD);
        let mut c = Confusion::default();
        for (&p, &t) in pred.iter().zip(target) {
            let t = if t == T::one() {
                true
            } else if t == T::zero() {
                false
            } else {
                return Err(Error::NonBinaryTarget);
            };
            match (p >= thr, t) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn metrics(&self) -> Metrics {
        let (tp, fp, fn_) = (self.tp as f64, self.fp as f64, self.fn_ as f64);
        if self.tp + self.fp + self.fn_ == 0 {
            return Metrics {
                dc: 1.0,
                iou: 1.0,
                precision: 1.0,
                recall: 1.0,
            };
        }
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { 0.0 };
        Metrics {
            dc: 2.0 * tp / (2.0 * tp + fp + fn_),
            iou: tp / (tp + fp + fn_),
            precision: ratio(tp, tp + fp),
            recall: ratio(tp, tp + fn_),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub dc: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

impl Metrics {
    pub fn of<T: Element>(pred: &[T], target: &[T]) -> Result<Self> {
        Ok(Confusion::from_maps(pred, target)?.metrics())
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.dc, self.iou, self.precision, self.recall]
    }

    /// Componentwise mean; `None` for an empty slice.
    pub fn mean(all: &[Metrics]) -> Option<Metrics> {
        if all.is_empty() {
            return None;
        }
        let n = all.len() as f64;
        let mut acc = [0.0; 4];
        for m in all {
            for (a, v) in acc.iter_mut().zip(m.as_array()) {
                *a += v;
            }
        }
        Some(Metrics {
            dc: acc[0] / n,
            iou: acc[1] / n,
            precision: acc[2] / n,
            recall: acc[3] / n,
        })
    }
}
