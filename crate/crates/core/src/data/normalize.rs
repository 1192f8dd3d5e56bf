use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::diffarray::Array4;
use crate::error::{Error, Result};

/// Channel variances are floored at this value.
pub const VAR_FLOOR: f64 = 1e-6;

/// Per-channel dataset statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Population mean and standard deviation over every pixel of `samples`.
    pub fn compute(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("normalisation statistics"));
        }
        let mut sum = [0.0f64; 3];
        let mut count = 0usize;
        for s in samples {
            let plane = s.image.shape().plane();
            for (c, acc) in sum.iter_mut().enumerate() {
                *acc += s.image.item_slice(0)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            count += plane;
        }
        let mean = sum.map(|v| v / count as f64);
        let mut sq = [0.0f64; 3];
        for s in samples {
            let plane = s.image.shape().plane();
            for (c, acc) in sq.iter_mut().enumerate() {
                *acc += s.image.item_slice(0)[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| (v as f64 - mean[c]).powi(2))
                    .sum::<f64>();
            }
        }
        let std = std::array::from_fn(|c| (sq[c] / count as f64).max(VAR_FLOOR).sqrt());
        Ok(NormStats { mean, std })
    }

    pub fn normalize(&self, image: &Array4<f32>) -> Array4<f32> {
        let s = image.shape();
        Array4::from_fn(s, |n, c, y, x| {
            ((image.get(n, c, y, x) as f64 - self.mean[c]) / self.std[c]) as f32
        })
    }

    pub fn denormalize(&self, image: &Array4<f32>) -> Array4<f32> {
        let s = image.shape();
        Array4::from_fn(s, |n, c, y, x| {
            (image.get(n, c, y, x) as f64 * self.std[c] + self.mean[c]) as f32
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
