use crate::data::Meta;
use crate::diffarray::{Array4, Shape};
use crate::error::{Error, Result};

/// One image with its lesion mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `(1, 3, H, W)` with values in `[0, 1]`.
    pub image: Array4<f32>,
    /// `(1, 1, H, W)` with values in `{0, 1}`.
    pub mask: Array4<f32>,
    pub meta: Meta,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Array4<f32>, mask: Array4<f32>, meta: Meta) -> Result<Self> {
        let (i, m) = (image.shape(), mask.shape());
        let id = id.into();
        if i.n != 1 || i.c != 3 || m != Shape::new(1, 1, i.h, i.w) {
            return Err(Error::Data(format!(
                "sample {id}: image {i} and mask {m} are not aligned"
            )));
        }
        if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::Data(format!("sample {id}: mask is not binary")));
        }
        Ok(Sample { id, image, mask, meta })
    }

    pub fn side(&self) -> usize {
        self.image.shape().h
    }

    pub fn lesion_fraction(&self) -> f64 {
        self.mask.data().iter().map(|&v| v as f64).sum::<f64>() / self.mask.shape().len() as f64
    }
}

/// Stack samples into `(images, masks)` batches.
pub fn batch(samples: &[&Sample]) -> Result<(Array4<f32>, Array4<f32>)> {
    let images: Vec<&Array4<f32>> = samples.iter().map(|s| &s.image).collect();
    let masks: Vec<&Array4<f32>> = samples.iter().map(|s| &s.mask).collect();
    Ok((Array4::stack(&images)?, Array4::stack(&masks)?))
}
