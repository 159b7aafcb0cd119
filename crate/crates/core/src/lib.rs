//! Abstractive summarization with global encoding.
//!
//! A bidirectional LSTM encodes the source; a convolutional gated unit
//! refines every encoder state using whole-sequence context (inception-style
//! 1-D convolutions, scaled dot-product self-attention and a sigmoid gate);
//! an LSTM decoder with bilinear global attention produces the summary.
//! Everything runs on the crate's own tape-based autodiff.

pub mod cgu;
pub mod checkpoint;
pub mod data;
pub mod decoder;
pub mod error;
pub mod gradcheck;
pub mod inference;
pub mod layers;
pub mod metrics;
pub mod model;
pub mod synthetic;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{DType, Graph, Scalar, Tensor, Var};
