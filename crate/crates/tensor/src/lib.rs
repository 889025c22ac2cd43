//! Minimal differentiable tensor engine: immutable row-major tensors, a
//! tape-ordered graph with reverse-mode gradients, (masked) channel
//! statistics, and a finite-difference gradient checker.

mod conv;
mod element;
mod error;
mod gradcheck;
mod graph;
mod rng;
mod stats;
mod tensor;

pub use element::Element;
pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, GradCheckReport};
pub use graph::{Gradients, Graph, NodeId};
pub use rng::RngState;
pub use stats::{adain, channel_stats, ChannelStats};
pub use tensor::Tensor;

/// Default epsilon under the square root of every variance.
pub const NORM_EPS: f32 = 1e-5;
