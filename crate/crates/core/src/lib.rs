//! Quaternion convolutional networks for joint sound event localization and
//! detection (SELD) on first-order ambisonic (B-format) audio.
//!
//! The four B-format channels W, X, Y, Z are treated as one quaternion
//! signal. Spectrogram magnitude and phase form two quaternion input
//! channels, which pass through a stack of Hamilton-product convolutions,
//! a bidirectional GRU, and two output branches: per-class activity (SED)
//! and per-class Cartesian direction of arrival (DOA).
//!
//! Everything runs on `f64` with hand-written backward passes, so every
//! layer can be checked against central finite differences.

pub mod error;
pub mod features;
pub mod init;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod params;
pub mod precision;
pub mod qnn;
pub mod quat;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use quat::{hamilton_product, to_real_block, QuatTensor, Quaternion, RealMatrix};
