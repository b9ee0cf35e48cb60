//! Exact Euclidean distance transforms on anisotropic voxel grids
//! (separable lower-envelope algorithm of Felzenszwalb and Huttenlocher).

use ndarray::{Array3, ArrayView3, Axis};

fn envelope_1d(f: &[f64], spacing: f64, out: &mut [f64], v: &mut Vec<usize>, z: &mut Vec<f64>) {
    let n = f.len();
    v.clear();
    z.clear();
    let pos = |q: usize| q as f64 * spacing;
    for q in 0..n {
        if !f[q].is_finite() {
            continue;
        }
        loop {
            match v.last() {
                None => {
                    v.push(q);
                    z.clear();
                    z.push(f64::NEG_INFINITY);
                    break;
                }
                Some(&p) => {
                    let s = ((f[q] + pos(q) * pos(q)) - (f[p] + pos(p) * pos(p))) / (2.0 * (pos(q) - pos(p)));
                    if s <= *z.last().unwrap() {
                        v.pop();
                        z.pop();
                    } else {
                        v.push(q);
                        z.push(s);
                        break;
                    }
                }
            }
        }
    }
    if v.is_empty() {
        out.fill(f64::INFINITY);
        return;
    }
    let mut k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        let x = pos(q);
        while k + 1 < v.len() && z[k + 1] < x {
            k += 1;
        }
        let d = x - pos(v[k]);
        *o = d * d + f[v[k]];
    }
}

/// Squared Euclidean distance (in spacing units) from every voxel to the
/// nearest `true` voxel of `seeds`. All infinite when there are no seeds.
pub fn squared_distance_to_set(seeds: &ArrayView3<bool>, spacing: [f64; 3]) -> Array3<f64> {
    let mut dist = seeds.mapv(|s| if s { 0.0 } else { f64::INFINITY });
    let mut v = Vec::new();
    let mut z = Vec::new();
    for (axis, &sp) in spacing.iter().enumerate() {
        let n = dist.len_of(Axis(axis));
        let mut buf = vec![0.0; n];
        let mut out = vec![0.0; n];
        for mut lane in dist.lanes_mut(Axis(axis)) {
            for (b, x) in buf.iter_mut().zip(lane.iter()) {
                *b = *x;
            }
            envelope_1d(&buf, sp, &mut out, &mut v, &mut z);
            for (x, o) in lane.iter_mut().zip(&out) {
                *x = *o;
            }
        }
    }
    dist
}

/// Foreground voxels with at least one face neighbour in the background.
/// With `edges_are_border`, voxels on the grid edge also count.
pub fn border_voxels(mask: &ArrayView3<u8>, edges_are_border: bool) -> Array3<bool> {
    let sh = mask.shape();
    let (nx, ny, nz) = (sh[0] as isize, sh[1] as isize, sh[2] as isize);
    Array3::from_shape_fn((sh[0], sh[1], sh[2]), |(x, y, z)| {
        if mask[[x, y, z]] == 0 {
            return false;
        }
        let (x, y, z) = (x as isize, y as isize, z as isize);
        const N6: [(isize, isize, isize); 6] = [(1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)];
        N6.iter().any(|&(dx, dy, dz)| {
            let (a, b, c) = (x + dx, y + dy, z + dz);
            if a < 0 || b < 0 || c < 0 || a >= nx || b >= ny || c >= nz {
                edges_are_border
            } else {
                mask[[a as usize, b as usize, c as usize]] == 0
            }
        })
    })
}
