//! Supervised loss, the unsupervised regularizers of the specialist
//! strategies, and the weight / learning-rate schedules.

pub mod losses;
pub mod schedule;
pub mod uncertainty;

use crate::error::{Error, Result};
use ndarray::Array3;

pub use losses::{
    consistency_loss, dan_evaluator_loss, dan_unsupervised_loss, dtc_loss, region_selective_loss,
    supervised_loss, DualLossGrad, LossGrad,
};
pub use schedule::{lambda_schedule, poly_lr, uncertainty_threshold};
pub use uncertainty::{predictive_entropy, teacher_uncertainty, uncertainty_mask};

/// Binary voxel selector gating a region-selective loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionMask(Array3<u8>);

impl RegionMask {
    pub fn new(data: Array3<u8>) -> Result<Self> {
        if data.iter().any(|&v| v > 1) {
            return Err(Error::Invalid("region mask must be binary".into()));
        }
        Ok(RegionMask(data))
    }

    pub fn ones(shape: [usize; 3]) -> Self {
        RegionMask(Array3::ones(shape))
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.0
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&v| v == 1).count()
    }
}

/// Non-negative, finite voxelwise uncertainty.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap(Array3<f32>);

impl UncertaintyMap {
    pub fn new(data: Array3<f32>) -> Result<Self> {
        if data.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Numeric("uncertainty must be finite and non-negative".into()));
        }
        Ok(UncertaintyMap(data))
    }

    pub fn zeros(shape: [usize; 3]) -> Self {
        UncertaintyMap(Array3::zeros(shape))
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.0
    }
}
