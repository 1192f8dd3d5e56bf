//! Learnable layer primitives.

mod batchnorm;
mod conv;
mod pool;
mod transconv;

pub use batchnorm::{batchnorm_eval, batchnorm_train, BatchNorm2d, BN_EPS, BN_MOMENTUM};
pub use conv::{conv2d, Conv2d, ConvSpec};
pub use pool::maxpool2;
pub use transconv::{transconv2d, TransConv2d, TransConvSpec};
