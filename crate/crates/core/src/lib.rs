//! Coarse-to-fine segmentation refinement on a small pyramid pooling network.
//!
//! A *detailer* receives an image together with a coarse annotation (a
//! partial, high-precision labeling). The coarse mask is one-hot encoded,
//! embedded with a 1x1 convolution and concatenated with the visual features
//! at a configurable depth; the network's output is treated as a correction
//! that is added to the one-hot coarse mask through an identity skip.
//!
//! Modules, bottom-up:
//! - [`tensor`] and [`ops`]: NCHW tensors with hand-written backward passes.
//! - [`net`]: the classifier/detailer network and checkpoints.
//! - [`data`]: synthetic scenes, coarse-mask simulation, augmentation, PNM I/O.
//! - [`train`]: SGD with momentum and a polynomial learning-rate schedule.
//! - [`eval`]: confusion matrices, mIoU, composite predictions, distillation.

pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod mask;
pub mod net;
pub mod ops;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use mask::{LabelMask, IGNORE};
pub use tensor::{Dims, Scalar, Tensor4};
