//! Minimal reverse-mode differentiation for convolutional networks.
//!
//! Each [`Layer`] caches what its backward pass needs during `forward`, so a
//! network is differentiated by calling `backward` on its layers in reverse.

mod activation;
mod batchnorm;
mod conv;
mod layer;
mod linear;
mod optim;
mod resample;
mod scalar;
mod tensor;

pub use activation::{leaky_relu, relu, sigmoid, tanh, Act, Activation, LEAKY_SLOPE};
pub use batchnorm::{
    batch_norm_backward, batch_norm_eval, batch_norm_train, BatchNorm2d, BatchStats, BN_EPS, BN_MOMENTUM,
};
pub use conv::{conv2d, conv2d_backward, Conv2d};
pub use layer::{Layer, Mode, Sequential};
pub use linear::Linear;
pub use optim::{adam_step, cosine_lr, Adam, Moments, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use resample::{AvgPool2, Flatten, GlobalAvgPool, Upsample2x};
pub use scalar::{gemm, Scalar, Strides};
pub use tensor::{concat_channels, split_channels, Param, Tensor};
pub(crate) use layer::{join, missing_cache};
