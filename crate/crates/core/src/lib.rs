//! ResNeSAt: split-attention residual networks with an inserted spatial
//! attention module, implemented from scratch on the CPU.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: the dense [`Tensor`] value type and numeric kernels
//!   (convolution in naive and im2col form, pooling, matmul, resize).
//! - [`layers`]: trainable layers with explicit forward/backward passes and a
//!   finite-difference gradient checker.
//! - [`attention`]: split-attention convolution, spatial attention and the
//!   bottleneck block that combines them.
//! - [`net`]: the full network, parameter counting and checkpoints.
//! - [`data`]: manifests, PGM images, phantom generation, preprocessing and
//!   fold splitting.
//! - [`train`]: cosine-annealed SGD, the metric suite and cross-validation.
//!
//! Kernels parallelise over independent output elements with rayon when the
//! `parallel` feature is enabled. Every output element is computed by exactly
//! one worker with a fixed summation order, so results are bit-identical to
//! the sequential path.

pub mod attention;
pub mod data;
mod error;
pub mod exec;
pub mod layers;
pub mod net;
mod scalar;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use exec::Exec;
pub use scalar::Scalar;
pub use tensor::Tensor;
