//! Oracle generalist: the hidden ground truth passed through a controllable
//! corruption.

use super::prompt::Prompt;
use crate::data::{PatchSource, TruthRegistry};
use crate::error::{Error, Result};
use crate::rng::seeded_stream;
use ndarray::{Array3, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

/// Axis-aligned half-open box `[lo, hi)` in patch coordinates with an extra
/// flip rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionBias {
    pub lo: [usize; 3],
    pub hi: [usize; 3],
    pub rate: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionSpec {
    #[serde(default)]
    pub flip_rate: f64,
    /// Radius of a random dilation or erosion (cube structuring element).
    #[serde(default)]
    pub radius: usize,
    #[serde(default)]
    pub region_bias: Option<RegionBias>,
    /// Re-sample the corruption for every distinct prompt.
    #[serde(default)]
    pub jitter: bool,
    /// Soften the output with a 3x3x3 box filter.
    #[serde(default)]
    pub blur: bool,
    #[serde(default)]
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let ok = |r: f64| (0.0..=1.0).contains(&r);
        if !ok(self.flip_rate) {
            return Err(format!("flip_rate {} outside [0,1]", self.flip_rate));
        }
        if let Some(b) = &self.region_bias {
            if !ok(b.rate) {
                return Err(format!("region_bias.rate {} outside [0,1]", b.rate));
            }
            if (0..3).any(|a| b.lo[a] > b.hi[a]) {
                return Err(format!("region_bias box {:?}..{:?} is inverted", b.lo, b.hi));
            }
        }
        Ok(())
    }
}

pub struct OracleBackend {
    spec: CorruptionSpec,
    truth: Arc<TruthRegistry>,
}

fn image_digest(image: &Array3<f32>) -> [u8; 32] {
    let mut h = Sha256::new();
    for d in image.shape() {
        h.update((*d as u64).to_le_bytes());
    }
    for v in image.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

fn morph(mask: &Array3<u8>, radius: usize, dilate: bool) -> Array3<u8> {
    // separable cube max/min filter
    let mut cur = mask.clone();
    let sh = [mask.shape()[0], mask.shape()[1], mask.shape()[2]];
    for axis in 0..3 {
        let prev = cur.clone();
        for ((i, j, k), v) in cur.indexed_iter_mut() {
            let p = [i, j, k];
            let lo = p[axis].saturating_sub(radius);
            let hi = (p[axis] + radius).min(sh[axis] - 1);
            let mut q = p;
            let mut acc = !dilate;
            for x in lo..=hi {
                q[axis] = x;
                let fg = prev[q] != 0;
                acc = if dilate { acc || fg } else { acc && fg };
            }
            *v = u8::from(acc);
        }
    }
    cur
}

fn box_blur(a: &Array3<f32>) -> Array3<f32> {
    let sh = [a.shape()[0], a.shape()[1], a.shape()[2]];
    let mut cur = a.clone();
    for axis in 0..3 {
        let prev = cur.clone();
        for ((i, j, k), v) in cur.indexed_iter_mut() {
            let p = [i, j, k];
            let lo = p[axis].saturating_sub(1);
            let hi = (p[axis] + 1).min(sh[axis] - 1);
            let mut q = p;
            let mut s = 0.0f32;
            for x in lo..=hi {
                q[axis] = x;
                s += prev[q];
            }
            *v = s / (hi - lo + 1) as f32;
        }
    }
    cur
}

impl OracleBackend {
    pub fn new(spec: CorruptionSpec, truth: Arc<TruthRegistry>) -> Result<Self> {
        spec.validate().map_err(Error::Generalist)?;
        Ok(OracleBackend { spec, truth })
    }

    pub fn spec(&self) -> &CorruptionSpec {
        &self.spec
    }

    /// Ground truth of the patch, reconstructed from its source record.
    pub fn truth_patch(&self, source: &PatchSource) -> Result<Array3<u8>> {
        let full = self
            .truth
            .get(&source.id)
            .ok_or_else(|| Error::Generalist(format!("oracle has no ground truth for `{}`", source.id)))?;
        source.replay(full)
    }

    pub fn predict(&self, image: &Array3<f32>, prompt: &Prompt, source: &PatchSource) -> Result<Array3<f32>> {
        let truth = self.truth_patch(source)?;
        if truth.shape() != image.shape() {
            return Err(Error::Generalist(format!(
                "ground truth {:?} does not match patch {:?}",
                truth.shape(),
                image.shape()
            )));
        }
        Ok(self.corrupt(&truth, image, prompt))
    }

    /// Deterministic corruption keyed by the image and, with jitter, the prompt.
    pub fn corrupt(&self, truth: &Array3<u8>, image: &Array3<f32>, prompt: &Prompt) -> Array3<f32> {
        let mut key = crate::config::hex(&image_digest(image));
        if self.spec.jitter {
            key.push('/');
            key.push_str(&crate::config::hex(&prompt.digest()));
        }
        let mut rng = seeded_stream(self.spec.seed, &format!("oracle/{key}"));
        let mut m = truth.clone();
        if self.spec.radius > 0 {
            let dilate = rng.random_bool(0.5);
            m = morph(&m, self.spec.radius, dilate);
        }
        let base = self.spec.flip_rate;
        let bias = self.spec.region_bias.as_ref();
        if base > 0.0 || bias.is_some_and(|b| b.rate > 0.0) {
            for ((i, j, k), v) in m.indexed_iter_mut() {
                let p = [i, j, k];
                let rate = match bias {
                    Some(b) if (0..3).all(|a| p[a] >= b.lo[a] && p[a] < b.hi[a]) => 1.0 - (1.0 - base) * (1.0 - b.rate),
                    _ => base,
                };
                // one draw per voxel keeps the stream layout independent of rates
                let u: f64 = rng.random();
                if u < rate {
                    *v ^= 1;
                }
            }
        }
        let mut out = m.mapv(f32::from);
        if self.spec.blur {
            out = box_blur(&out);
        }
        Zip::from(&mut out).for_each(|v| *v = v.clamp(0.0, 1.0));
        out
    }
}
