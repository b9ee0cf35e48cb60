//! Random crops, flip / rotation augmentation, and labeled / unlabeled
//! batch composition.

use super::manifest::Case;
use crate::error::{Error, Result};
use crate::rng::Stream;
use ndarray::{s, Array3, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// One recorded augmentation step, replayable on any aligned array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AugOp {
    Flip(usize),
    /// `k` quarter turns in the plane of the two axes.
    Rot90 { axes: (usize, usize), k: u8 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub image: Array3<f32>,
    pub label: Option<Array3<u8>>,
    pub origin: [usize; 3],
    pub source_id: String,
    /// Augmentations applied after cropping, in order.
    pub ops: Vec<AugOp>,
}

/// Where a patch came from and how it was transformed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PatchSource {
    pub id: String,
    pub origin: [usize; 3],
    pub size: [usize; 3],
    pub ops: Vec<AugOp>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub labeled: Vec<Patch>,
    pub unlabeled: Vec<Patch>,
}

impl Patch {
    pub fn shape(&self) -> [usize; 3] {
        let s = self.image.shape();
        [s[0], s[1], s[2]]
    }

    pub fn source(&self) -> PatchSource {
        PatchSource { id: self.source_id.clone(), origin: self.origin, size: self.shape(), ops: self.ops.clone() }
    }
}

impl PatchSource {
    /// Crops `full` like the patch and replays its augmentations.
    pub fn replay<T: Clone>(&self, full: &Array3<T>) -> Result<Array3<T>> {
        let sh = full.shape();
        if (0..3).any(|a| self.origin[a] + self.size[a] > sh[a]) {
            return Err(Error::Shape(format!("crop {:?}+{:?} outside {:?}", self.origin, self.size, sh)));
        }
        let crop = crop(full, self.origin, self.size);
        Ok(apply_ops(crop, &self.ops))
    }
}

fn crop<T: Clone>(a: &Array3<T>, o: [usize; 3], size: [usize; 3]) -> Array3<T> {
    a.slice(s![o[0]..o[0] + size[0], o[1]..o[1] + size[1], o[2]..o[2] + size[2]]).to_owned()
}

fn rot90<T: Clone>(a: Array3<T>, axes: (usize, usize), k: u8) -> Array3<T> {
    let mut out = a;
    for _ in 0..k % 4 {
        let mut v = out.view();
        v.swap_axes(axes.0, axes.1);
        v.invert_axis(Axis(axes.0));
        out = v.as_standard_layout().into_owned();
    }
    out
}

/// Applies recorded ops in order.
pub fn apply_ops<T: Clone>(a: Array3<T>, ops: &[AugOp]) -> Array3<T> {
    let mut out = a;
    for op in ops {
        out = match *op {
            AugOp::Flip(axis) => {
                let mut v = out.view();
                v.invert_axis(Axis(axis));
                v.as_standard_layout().into_owned()
            }
            AugOp::Rot90 { axes, k } => rot90(out, axes, k),
        };
    }
    out
}

/// Uniformly random crop fully inside the volume.
pub fn sample_patch(case: &Case, patch_size: [usize; 3], stream: &mut Stream) -> Result<Patch> {
    let shape = case.shape();
    if (0..3).any(|a| patch_size[a] > shape[a] || patch_size[a] == 0) {
        return Err(Error::Shape(format!("patch {patch_size:?} does not fit volume {shape:?}")));
    }
    let origin: [usize; 3] = std::array::from_fn(|a| stream.random_range(0..=shape[a] - patch_size[a]));
    Ok(Patch {
        image: crop(case.volume.data(), origin, patch_size),
        label: case.mask.as_ref().map(|m| crop(m.data(), origin, patch_size)),
        origin,
        source_id: case.id().to_string(),
        ops: Vec::new(),
    })
}

/// Draws independent flips per axis (p = 0.5) and a random number of
/// quarter turns in a random axis pair. Turns are restricted to half turns
/// when the two axes differ in length so the patch shape is preserved.
pub fn draw_ops(shape: [usize; 3], stream: &mut Stream) -> Vec<AugOp> {
    let mut ops = Vec::new();
    for axis in 0..3 {
        if stream.random_bool(0.5) {
            ops.push(AugOp::Flip(axis));
        }
    }
    let pairs = [(0, 1), (0, 2), (1, 2)];
    let axes = pairs[stream.random_range(0..3)];
    let mut k: u8 = stream.random_range(0..4);
    if shape[axes.0] != shape[axes.1] {
        k &= !1;
    }
    if k != 0 {
        ops.push(AugOp::Rot90 { axes, k });
    }
    ops
}

pub fn augment(patch: Patch, stream: &mut Stream) -> Patch {
    let ops = draw_ops(patch.shape(), stream);
    augment_with(patch, &ops)
}

pub fn augment_with(patch: Patch, ops: &[AugOp]) -> Patch {
    let mut all = patch.ops;
    all.extend_from_slice(ops);
    Patch {
        image: apply_ops(patch.image, ops),
        label: patch.label.map(|l| apply_ops(l, ops)),
        origin: patch.origin,
        source_id: patch.source_id,
        ops: all,
    }
}

/// `batch_size / 2` augmented crops from each pool, sampled with replacement.
pub fn compose_batch(
    labeled: &[Case],
    unlabeled: &[Case],
    batch_size: usize,
    patch_size: [usize; 3],
    stream: &mut Stream,
) -> Result<Batch> {
    if labeled.is_empty() || unlabeled.is_empty() {
        return Err(Error::Data("labeled and unlabeled pools must be non-empty".into()));
    }
    if batch_size == 0 || batch_size % 2 != 0 {
        return Err(Error::Invalid("batch_size must be even".into()));
    }
    let draw = |pool: &[Case], stream: &mut Stream| -> Result<Patch> {
        let case = &pool[stream.random_range(0..pool.len())];
        let p = sample_patch(case, patch_size, stream)?;
        Ok(augment(p, stream))
    };
    let half = batch_size / 2;
    let labeled = (0..half).map(|_| draw(labeled, stream)).collect::<Result<Vec<_>>>()?;
    let unlabeled = (0..half)
        .map(|_| {
            let mut p = draw(unlabeled, stream)?;
            p.label = None;
            Ok(p)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Batch { labeled, unlabeled })
}
