//! Overlap and surface-distance metrics between binary masks.

use crate::distance::{border_voxels, squared_distance_to_set};
use crate::error::{shape_err, Error, Result};
use ndarray::{ArrayView3, Zip};

fn counts(a: &ArrayView3<u8>, b: &ArrayView3<u8>) -> Result<(usize, usize, usize)> {
    if a.shape() != b.shape() {
        return shape_err("metric masks", a.shape(), b.shape());
    }
    let (mut inter, mut na, mut nb) = (0, 0, 0);
    Zip::from(a).and(b).for_each(|&x, &y| {
        let (x, y) = (x != 0, y != 0);
        inter += usize::from(x && y);
        na += usize::from(x);
        nb += usize::from(y);
    });
    Ok((inter, na, nb))
}

/// `2|A∩B| / (|A|+|B|)`, 1 when both are empty.
pub fn dice(a: &ArrayView3<u8>, b: &ArrayView3<u8>) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    Ok(if na + nb == 0 { 1.0 } else { 2.0 * i as f64 / (na + nb) as f64 })
}

/// `|A∩B| / |A∪B|`, 1 when both are empty.
pub fn jaccard(a: &ArrayView3<u8>, b: &ArrayView3<u8>) -> Result<f64> {
    let (i, na, nb) = counts(a, b)?;
    let union = na + nb - i;
    Ok(if union == 0 { 1.0 } else { i as f64 / union as f64 })
}

/// Linear-interpolation percentile of unsorted values, `q` in `[0, 100]`.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 1 {
        return values[0];
    }
    let pos = q / 100.0 * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Directed distances from each border voxel of one mask to the border of
/// the other, in both directions, pooled. Border voxels are foreground
/// voxels with a background or out-of-grid face neighbour.
pub fn pooled_surface_distances(a: &ArrayView3<u8>, b: &ArrayView3<u8>, spacing: [f64; 3]) -> Result<Vec<f64>> {
    if a.shape() != b.shape() {
        return shape_err("surface masks", a.shape(), b.shape());
    }
    if a.iter().all(|&v| v == 0) || b.iter().all(|&v| v == 0) {
        return Err(Error::Invalid("surface distance undefined for an empty mask".into()));
    }
    let ba = border_voxels(a, true);
    let bb = border_voxels(b, true);
    let da = squared_distance_to_set(&ba.view(), spacing);
    let db = squared_distance_to_set(&bb.view(), spacing);
    let mut out = Vec::new();
    Zip::from(&ba).and(&db).for_each(|&is, &d| {
        if is {
            out.push(d.sqrt());
        }
    });
    Zip::from(&bb).and(&da).for_each(|&is, &d| {
        if is {
            out.push(d.sqrt());
        }
    });
    Ok(out)
}

/// `(hd95, asd)` over the pooled directed surface distances.
pub fn surface_distances(a: &ArrayView3<u8>, b: &ArrayView3<u8>, spacing: [f64; 3]) -> Result<(f64, f64)> {
    let mut d = pooled_surface_distances(a, b, spacing)?;
    let asd = d.iter().sum::<f64>() / d.len() as f64;
    Ok((percentile(&mut d, 95.0), asd))
}
