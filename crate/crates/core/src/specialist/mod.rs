//! Trainable specialist networks and their maintenance operations.

pub mod ema;
pub mod evaluator;
pub mod levelset;
pub mod unet;

pub use ema::{ema_update, ema_update_inplace};
pub use evaluator::EvaluatorArch;
pub use levelset::{levelset_to_prob, levelset_transform};
pub use unet::{Perturbation, UNetArch, UNetOutput};
