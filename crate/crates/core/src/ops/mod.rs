//! Forward and hand-derived backward passes for every layer the network uses.

mod conv;
mod elementwise;
mod loss;
mod pool;
mod resample;

pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvParams};
pub use elementwise::{
    add, add_backward, concat_channels, concat_channels_backward, concat_many, relu, relu_backward,
    split_channels, split_many,
};
pub use loss::{argmax_labels, softmax_ce_ignore};
pub use pool::{adaptive_avg_pool, adaptive_avg_pool_backward};
pub use resample::{bilinear_upsample, bilinear_upsample_backward, nearest_resize};
