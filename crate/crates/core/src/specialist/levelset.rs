use crate::distance::{border_voxels, squared_distance_to_set};
use crate::nn::{sigmoid, Scalar};
use ndarray::{Array3, ArrayView3};

/// Normalized signed distance map of a binary mask.
///
/// Border voxels (foreground with a background face neighbour) are 0,
/// interior voxels are negative and background voxels positive, each holding
/// the Euclidean distance in voxels to the nearest border voxel. The result is
/// divided by its maximum magnitude. An empty mask maps to +1 everywhere and a
/// mask without border voxels (all foreground) to -1 everywhere.
pub fn levelset_transform(mask: &ArrayView3<u8>) -> Array3<f32> {
    let border = border_voxels(mask, false);
    if !mask.iter().any(|&m| m != 0) {
        return Array3::from_elem(mask.raw_dim(), 1.0);
    }
    if !border.iter().any(|&b| b) {
        return Array3::from_elem(mask.raw_dim(), -1.0);
    }
    let d2 = squared_distance_to_set(&border.view(), [1.0; 3]);
    let mut signed = Array3::zeros(mask.raw_dim());
    ndarray::Zip::from(&mut signed).and(mask).and(&d2).for_each(|s, &m, &d| {
        let d = d.sqrt();
        *s = if m != 0 { -d } else { d };
    });
    let max = signed.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if max > 0.0 {
        signed.mapv_inplace(|v| v / max);
    }
    signed.mapv(|v| v as f32)
}

/// Maps a level-set prediction to foreground probability: `sigmoid(-k z)`.
pub fn levelset_to_prob<S: Scalar>(z: &ArrayView3<S>, k: f64) -> Array3<S> {
    let k = S::lit(k);
    z.mapv(|v| sigmoid(-k * v))
}
