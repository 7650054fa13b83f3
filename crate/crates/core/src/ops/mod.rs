//! Forward and backward kernels for every operation the network uses.

mod activation;
mod basic;
mod conv;
mod norm;
mod pool;
mod resize;
mod softmax;

pub use activation::{gelu, gelu_derivative, gelu_scalar};
pub use basic::{add, channel_scale, concat_channels};
pub use conv::{conv2d, depthwise_conv2d, ConvParams, ConvSpec};
pub use norm::{layer_norm, DEFAULT_EPS as LAYER_NORM_EPS};
pub use pool::adaptive_avg_pool;
pub use resize::bilinear_resize;
pub use softmax::softmax_channels;

pub(crate) use activation::gelu_backward;
pub(crate) use basic::{channel_scale_backward, concat_backward};
pub(crate) use conv::{conv2d_backward, conv2d_forward};
pub(crate) use norm::{layer_norm_backward, layer_norm_forward};
pub(crate) use pool::adaptive_avg_pool_backward;
pub(crate) use resize::bilinear_resize_backward;
pub(crate) use softmax::softmax_backward;
