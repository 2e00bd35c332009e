//! CNN building blocks and the TinyNet classifier.

pub mod layers;
pub mod model;
mod param;

pub use layers::{Conv2dParams, LinearParams, SppSpec};
pub use model::{ConvBlock, Model, ModelConfig, ParamGroup, NUM_CLASSES};
pub use param::Param;
