//! Volumetric value types shared by every module.

use crate::error::{shape_err, Error, Result};
use ndarray::Array3;

pub type Spacing = [f32; 3];

fn check_grid(shape: &[usize], spacing: &Spacing) -> Result<()> {
    if shape.iter().any(|&d| d == 0) {
        return Err(Error::Shape(format!("empty dimension in {shape:?}")));
    }
    if spacing.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::Invalid(format!("spacing must be positive, got {spacing:?}")));
    }
    Ok(())
}

/// Scalar image with voxel spacing in millimetres.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    data: Array3<f32>,
    spacing: Spacing,
    id: String,
}

impl Volume {
    pub fn new(data: Array3<f32>, spacing: Spacing, id: impl Into<String>) -> Result<Self> {
        check_grid(data.shape(), &spacing)?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("volume contains non-finite intensities".into()));
        }
        Ok(Volume { data, spacing, id: id.into() })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    /// Per-volume zero-mean, unit-variance normalization. Constant volumes map to zeros.
    pub fn z_scored(&self) -> Volume {
        let n = self.data.len() as f64;
        let mean = self.data.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = self.data.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt();
        let data = if std > 0.0 {
            self.data.mapv(|v| ((v as f64 - mean) / std) as f32)
        } else {
            Array3::zeros(self.data.raw_dim())
        };
        Volume { data, spacing: self.spacing, id: self.id.clone() }
    }
}

/// Binary single-target label grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentationMask {
    data: Array3<u8>,
    spacing: Spacing,
    id: String,
}

impl SegmentationMask {
    /// Builds a mask; any nonzero value is stored as 1.
    pub fn new(data: Array3<u8>, spacing: Spacing, id: impl Into<String>) -> Result<Self> {
        check_grid(data.shape(), &spacing)?;
        let data = data.mapv(|v| u8::from(v != 0));
        Ok(SegmentationMask { data, spacing, id: id.into() })
    }

    pub fn data(&self) -> &Array3<u8> {
        &self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Checks that this mask can label `vol`.
    pub fn check_pair(&self, vol: &Volume) -> Result<()> {
        if self.shape() != vol.shape() {
            return shape_err("mask/volume shape", &self.shape(), &vol.shape());
        }
        if self.spacing != vol.spacing {
            return Err(Error::Data(format!(
                "mask/volume spacing mismatch: {:?} vs {:?}",
                self.spacing, vol.spacing
            )));
        }
        Ok(())
    }
}

/// Per-voxel foreground probability.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    data: Array3<f32>,
    spacing: Spacing,
}

impl ProbabilityMap {
    /// Rejects any voxel outside `[0, 1]` (including NaN).
    pub fn new(data: Array3<f32>, spacing: Spacing) -> Result<Self> {
        check_grid(data.shape(), &spacing)?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Numeric(format!("probability {v} outside [0,1]")));
        }
        Ok(ProbabilityMap { data, spacing })
    }

    pub fn data(&self) -> &Array3<f32> {
        &self.data
    }

    pub fn into_data(self) -> Array3<f32> {
        self.data
    }

    pub fn spacing(&self) -> Spacing {
        self.spacing
    }

    pub fn shape(&self) -> [usize; 3] {
        let s = self.data.shape();
        [s[0], s[1], s[2]]
    }

    pub fn binarize(&self, threshold: f32) -> Array3<u8> {
        self.data.mapv(|p| u8::from(p >= threshold))
    }
}

pub fn dims(a: &[usize]) -> [usize; 3] {
    [a[0], a[1], a[2]]
}
