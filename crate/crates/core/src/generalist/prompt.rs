use crate::error::{Error, Result};
use ndarray::Array3;
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PromptPoint {
    pub coord: [usize; 3],
    pub positive: bool,
}

/// Positional conditioning for a generalist.
#[derive(Debug, Clone, PartialEq)]
pub enum Prompt {
    Points(Vec<PromptPoint>),
    Mask(Array3<u8>),
}

impl Prompt {
    pub fn positive_points(coords: impl IntoIterator<Item = [usize; 3]>) -> Prompt {
        Prompt::Points(coords.into_iter().map(|coord| PromptPoint { coord, positive: true }).collect())
    }

    pub fn validate(&self, shape: [usize; 3]) -> Result<()> {
        match self {
            Prompt::Points(pts) => {
                if pts.is_empty() {
                    return Err(Error::Generalist("point prompt without points".into()));
                }
                if let Some(p) = pts.iter().find(|p| (0..3).any(|a| p.coord[a] >= shape[a])) {
                    return Err(Error::Generalist(format!("prompt point {:?} outside patch {shape:?}", p.coord)));
                }
            }
            Prompt::Mask(m) => {
                if m.shape() != shape {
                    return Err(Error::Generalist(format!("mask prompt {:?} vs patch {shape:?}", m.shape())));
                }
                if m.iter().any(|&v| v > 1) {
                    return Err(Error::Generalist("mask prompt must be binary".into()));
                }
            }
        }
        Ok(())
    }

    /// Stable content digest.
    pub fn digest(&self) -> [u8; 32] {
        let mut h = Sha256::new();
        match self {
            Prompt::Points(pts) => {
                h.update(b"points");
                for p in pts {
                    for c in p.coord {
                        h.update((c as u64).to_le_bytes());
                    }
                    h.update([u8::from(p.positive)]);
                }
            }
            Prompt::Mask(m) => {
                h.update(b"mask");
                for d in m.shape() {
                    h.update((*d as u64).to_le_bytes());
                }
                h.update(m.iter().copied().collect::<Vec<u8>>());
            }
        }
        h.finalize().into()
    }

    /// First positive point, or for a mask the foreground centroid snapped
    /// to the nearest foreground voxel.
    pub fn anchor(&self) -> Option<[usize; 3]> {
        match self {
            Prompt::Points(pts) => pts.iter().find(|p| p.positive).or(pts.first()).map(|p| p.coord),
            Prompt::Mask(m) => snapped_centroid(m),
        }
    }
}

/// Foreground centroid moved to the nearest foreground voxel (ties broken by
/// raster order). `None` for an empty mask.
pub fn snapped_centroid(mask: &Array3<u8>) -> Option<[usize; 3]> {
    let mut sum = [0f64; 3];
    let mut n = 0usize;
    for ((i, j, k), &v) in mask.indexed_iter() {
        if v != 0 {
            sum[0] += i as f64;
            sum[1] += j as f64;
            sum[2] += k as f64;
            n += 1;
        }
    }
    if n == 0 {
        return None;
    }
    let c = sum.map(|s| s / n as f64);
    let mut best: Option<([usize; 3], f64)> = None;
    for ((i, j, k), &v) in mask.indexed_iter() {
        if v != 0 {
            let d = (i as f64 - c[0]).powi(2) + (j as f64 - c[1]).powi(2) + (k as f64 - c[2]).powi(2);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some(([i, j, k], d));
            }
        }
    }
    best.map(|(p, _)| p)
}
