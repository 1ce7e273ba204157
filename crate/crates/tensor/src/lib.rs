//! Dense N-dimensional tensors and a tape-based reverse-mode differentiator
//! covering the layers of a small convolutional network.
//!
//! Every operation is a method on [`Tape`]; calling [`Tape::backward`] on a
//! scalar node fills in gradients for every node reachable from a leaf.

mod error;
pub mod gradcheck;
pub mod ops;
mod param;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::activation::{sigmoid, swish};
pub use ops::conv::{conv2d_forward, conv_output_size, Conv2dOptions, ConvGeom};
pub use ops::norm::{BatchNormOptions, Mode, RunningStats};
pub use param::{Binder, Buffer, BufferId, ParamId, ParamStore, Parameter};
pub use real::{gemm, DType, MatRef, Real};
pub use tape::{Tape, Var};
pub use tensor::{numel, Tensor};
