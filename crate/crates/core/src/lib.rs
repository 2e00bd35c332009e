//! Arbitrary-sized image training for CNN classifiers.
//!
//! Images are fed one at a time at their native resolution; a spatial pyramid
//! pooling layer turns every feature map into a fixed-length vector, and
//! gradients from several images are summed before each parameter update
//! (pseudo-batch gradient descent). An optional learnable noise-residual layer,
//! initialised from SRM high-pass filters, sits in front of the backbone and is
//! trained with an alternating freeze schedule.

pub mod autograd;
pub mod bench;
pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod kernels;
pub mod nn;
pub mod optim;
pub mod residual;
pub mod scalar;
pub mod tensor;
pub mod train;

pub use autograd::{ElementwiseOp, Operand, Tape, Var};
pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;

pub type Tensor64 = Tensor<f64>;
pub type Tensor32 = Tensor<f32>;
pub type Tape64 = Tape<f64>;
pub type Model64 = nn::Model<f64>;
pub type Model32 = nn::Model<f32>;
