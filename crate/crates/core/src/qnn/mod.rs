//! Network layers with explicit forward and backward passes.
//!
//! Convolutional activations are laid out `[B, C, T, F]` (batch, channel,
//! frame, frequency bin). Every backward takes the cached forward state and
//! the output gradient, and returns the input gradient together with a
//! parameter gradient of the same type as the layer.

pub mod activation;
pub mod batchnorm;
pub mod conv;
pub mod dense;
pub mod gru;
pub mod pool;
pub mod real_conv;

pub use activation::{split_activation, split_activation_backward, Activation};
pub use batchnorm::{BatchNorm, BatchNormCache, Mode, SplitBatchNorm};
pub use conv::QConv2d;
pub use dense::{Dense, DenseCache, QDense, QDenseCache};
pub use gru::{BiGru, BiGruCache, Gru};
pub use pool::{max_pool_freq, max_pool_freq_backward, PoolIndices};
pub use real_conv::Conv2d;
