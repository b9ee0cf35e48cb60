//! Stub generalist: a ball around the prompt anchor, independent of the image.

use super::prompt::Prompt;
use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StubSpec {
    #[serde(default = "default_radius")]
    pub radius: f64,
}

fn default_radius() -> f64 {
    3.0
}

impl Default for StubSpec {
    fn default() -> Self {
        StubSpec { radius: default_radius() }
    }
}

pub fn ball(shape: [usize; 3], center: [usize; 3], radius: f64) -> Array3<f32> {
    let r2 = radius * radius;
    Array3::from_shape_fn((shape[0], shape[1], shape[2]), |(i, j, k)| {
        let d2 = [i, j, k].iter().zip(center).map(|(&p, c)| (p as f64 - c as f64).powi(2)).sum::<f64>();
        f32::from(u8::from(d2 <= r2))
    })
}

pub fn stub_predict(spec: &StubSpec, image: &Array3<f32>, prompt: &Prompt) -> Result<Array3<f32>> {
    let sh = image.shape();
    let shape = [sh[0], sh[1], sh[2]];
    let anchor = prompt.anchor().ok_or_else(|| Error::Generalist("stub needs a non-empty prompt".into()))?;
    Ok(ball(shape, anchor, spec.radius))
}
