//! The pyramid-pooling segmentation network and its detailer variant.

mod checkpoint;
mod config;
mod model;

pub use checkpoint::{Checkpoint, MANIFEST as CHECKPOINT_MANIFEST};
pub use config::{InjectionPoint, NetworkConfig};
pub use model::{embed_coarse, one_hot_encode, Gradients, Network, Trace, IMAGE_CHANNELS};
