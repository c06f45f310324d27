//! Inference engine and imaging toolkit for a mixed-quantization inverse tone
//! mapping network.
//!
//! - [`tensor`]: NHWC tensors and the float layer kernels.
//! - [`quant`]: affine int8/int16 quantization, integer kernels, calibration
//!   and whole-model quantization passes.
//! - [`blocks`]: inverted residual bottlenecks, ConvBnReLU and the gated
//!   attention blocks.
//! - [`model`]: the full network graph, its executor, MAC/param counting and
//!   the `MQNW` weights container.
//! - [`metrics`]: training losses and evaluation metrics.
//! - [`hdr`]: Radiance RGBE and PNG codecs plus tone mapping operators.

pub mod blocks;
pub mod error;
pub mod hdr;
pub mod metrics;
pub mod model;
pub mod quant;
pub mod tensor;

pub use error::{Error, Result};
pub use tensor::{DType, Tensor};
