//! Sliding-window full-volume inference.

use crate::error::{Error, Result};
use ndarray::{s, Array3};

/// Window origins along one axis: every `stride`, plus a final window
/// clamped to the end.
pub fn window_starts(len: usize, patch: usize, stride: usize) -> Vec<usize> {
    let last = len - patch;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

fn reflect(i: isize, n: usize) -> usize {
    // symmetric reflection with period 2n
    let n = n as isize;
    let m = i.rem_euclid(2 * n);
    (if m < n { m } else { 2 * n - 1 - m }) as usize
}

/// Symmetric padding up to at least `min` per axis; returns the padded
/// array and the offset of the original data.
fn pad_to(vol: &Array3<f32>, min: [usize; 3]) -> (Array3<f32>, [usize; 3]) {
    let sh = [vol.shape()[0], vol.shape()[1], vol.shape()[2]];
    let new: [usize; 3] = std::array::from_fn(|a| sh[a].max(min[a]));
    let off: [usize; 3] = std::array::from_fn(|a| (new[a] - sh[a]) / 2);
    let out = Array3::from_shape_fn((new[0], new[1], new[2]), |(i, j, k)| {
        let p = [i, j, k];
        let q: [usize; 3] = std::array::from_fn(|a| reflect(p[a] as isize - off[a] as isize, sh[a]));
        vol[q]
    });
    (out, off)
}

/// Tiles `volume` with `patch`-sized windows, runs `model` on each, and
/// averages overlapping outputs with uniform weights. Volumes smaller than
/// the patch are padded by reflection and cropped back.
pub fn sliding_window_infer<F>(volume: &Array3<f32>, patch: [usize; 3], stride: [usize; 3], mut model: F) -> Result<Array3<f32>>
where
    F: FnMut(&Array3<f32>) -> Result<Array3<f32>>,
{
    if stride.contains(&0) || patch.contains(&0) {
        return Err(Error::Invalid("stride and patch must be positive".into()));
    }
    if stride.iter().zip(&patch).any(|(s, p)| s > p) {
        return Err(Error::Invalid(format!("stride {stride:?} exceeds patch {patch:?}")));
    }
    let orig = [volume.shape()[0], volume.shape()[1], volume.shape()[2]];
    let (padded, off) = pad_to(volume, patch);
    let sh = [padded.shape()[0], padded.shape()[1], padded.shape()[2]];
    let mut acc = Array3::<f64>::zeros((sh[0], sh[1], sh[2]));
    let mut cnt = Array3::<u32>::zeros((sh[0], sh[1], sh[2]));
    let starts: Vec<Vec<usize>> = (0..3).map(|a| window_starts(sh[a], patch[a], stride[a])).collect();
    for &x in &starts[0] {
        for &y in &starts[1] {
            for &z in &starts[2] {
                let win = s![x..x + patch[0], y..y + patch[1], z..z + patch[2]];
                let input = padded.slice(win).to_owned();
                let out = model(&input)?;
                if out.shape() != input.shape() {
                    return Err(Error::Shape(format!("model returned {:?} for window {:?}", out.shape(), input.shape())));
                }
                acc.slice_mut(win).zip_mut_with(&out, |a, &o| *a += o as f64);
                cnt.slice_mut(win).mapv_inplace(|c| c + 1);
            }
        }
    }
    let avg = ndarray::Zip::from(&acc).and(&cnt).map_collect(|&a, &c| (a / c as f64) as f32);
    Ok(avg.slice(s![off[0]..off[0] + orig[0], off[1]..off[1] + orig[1], off[2]..off[2] + orig[2]]).to_owned())
}
