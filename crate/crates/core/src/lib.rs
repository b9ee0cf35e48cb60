//! Semi-supervised volumetric segmentation where a trainable specialist
//! network is regularized by frozen promptable generalist models.

pub mod cli;
pub mod config;
pub mod data;
pub mod distance;
pub mod generalist;
pub mod error;
pub mod eval;
pub mod nn;
pub mod prompting;
pub mod rng;
pub mod specialist;
pub mod ssl;
pub mod trainer;
pub mod volume;

pub use error::{Error, Result};
