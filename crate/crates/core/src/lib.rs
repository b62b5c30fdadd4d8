//! Self-contained single-image deraining toolkit built around a wavelet-domain
//! channel-attention network.
//!
//! The pieces, bottom up:
//!
//! - [`tensor`] / [`tape`]: dense tensors with reverse-mode autodiff over a
//!   Wengert tape (convolutions, Haar transforms, activations, reductions).
//! - [`wavelet`]: single-level 2-D Haar DWT/IDWT with exact reconstruction.
//! - [`blocks`]: channel attention and the WCAM/IWCAM/residual blocks.
//! - [`model`]: the encoder-decoder network that predicts per-subband
//!   confidence maps and fuses them with the input subbands.
//! - [`loss`] / [`optim`]: L1 + wavelet-SSIM training loss, PSNR/SSIM
//!   metrics, RAdam with the step-decay schedule.
//! - [`data`] / [`imageio`]: synthetic rain generation over procedural clean
//!   textures, paired datasets on disk, PNG I/O.
//! - [`config`] / [`checkpoint`] / [`pipeline`]: train/eval/ablate entry
//!   points shared by the CLI and the test suite.

pub mod blocks;
pub mod checkpoint;
pub mod config;
pub mod conv;
pub mod data;
pub mod error;
pub mod imageio;
pub mod loss;
pub mod model;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod scalar;
pub mod tape;
pub mod tensor;
pub mod wavelet;

pub use error::{Error, Result};
pub use scalar::{Precision, Scalar, Tolerances};
pub use tensor::Tensor;
