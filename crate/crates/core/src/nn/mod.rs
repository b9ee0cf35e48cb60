//! Minimal CPU tensor kernels with hand-written backward passes.

pub mod layers;
pub mod params;
pub mod scalar;
pub mod tensor;

pub use layers::{sigmoid, Conv3d, UpConv3d};
pub use params::{NamedTensor, ParamSet};
pub use scalar::Scalar;
pub use tensor::Tensor;
