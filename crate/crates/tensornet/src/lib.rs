//! A small, deterministic convolutional network engine.
//!
//! The layer set is fixed: 2-D convolution, batch normalization, ReLU, 2-D max
//! pooling, global average pooling, fully connected, and inverted dropout.
//! Gradients are written by hand per layer and composed by [`Sequential`].
//! Every operation is generic over [`Scalar`] so the same code path can be
//! run in `f32` for training and in `f64` for finite-difference checking.

mod checkpoint;
mod error;
pub mod layers;
mod loss;
mod network;
mod scalar;
mod tensor;

pub use checkpoint::{load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, Checkpoint};
pub use error::{Error, Result};
pub use layers::{Cache, Layer, LayerKind, Mode};
pub use loss::{softmax, weighted_cross_entropy, LossOutput};
pub use network::{Gradients, Sequential, Trace};
pub use scalar::Scalar;
pub use tensor::Tensor;
