//! Synthetic phantom generator: unions of random ellipsoids on a noisy
//! background.

use super::io::{save_mask, save_volume};
use super::manifest::{LabeledEntry, Manifest};
use crate::error::{Error, Result};
use crate::rng::seeded_stream;
use crate::volume::{SegmentationMask, Volume};
use ndarray::Array3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_volumes: usize,
    pub shape: [usize; 3],
    /// Inclusive range of foreground blobs per volume.
    pub n_blobs: [usize; 2],
    /// Range of ellipsoid semi-axes in voxels.
    pub radius: [f64; 2],
    pub mean_fg: f64,
    pub mean_bg: f64,
    pub noise_std: f64,
    /// Inclusive range of background ellipsoids drawn at `distractor_mean`.
    pub n_distractors: [usize; 2],
    pub distractor_mean: f64,
    pub distractor_radius: [f64; 2],
    /// Per-case distractor intensities cycled by case index; overrides
    /// `distractor_mean` when nonempty. An entry equal to `mean_bg` hides
    /// that case's distractors.
    pub distractor_cycle: Vec<f64>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_volumes: 30,
            shape: [48, 48, 48],
            n_blobs: [1, 3],
            radius: [6.0, 10.0],
            mean_fg: 1.0,
            mean_bg: 0.0,
            noise_std: 0.5,
            n_distractors: [0, 0],
            distractor_mean: 1.0,
            distractor_radius: [6.0, 10.0],
            distractor_cycle: Vec::new(),
        }
    }
}

/// How generated cases are split into the manifest. Test cases come last,
/// validation cases just before them, labeled training cases first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Partition {
    pub labeled: usize,
    pub val: usize,
    pub test: usize,
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_volumes < 2 {
            return Err(Error::Invalid("n_volumes must be >= 2".into()));
        }
        if self.shape.contains(&0) {
            return Err(Error::Invalid("shape must be positive".into()));
        }
        let ranges = if self.n_distractors[1] > 0 { vec![self.radius, self.distractor_radius] } else { vec![self.radius] };
        for r in ranges {
            if !(r[0] >= 0.5 && r[0] <= r[1]) {
                return Err(Error::Invalid(format!("degenerate blob radius range {r:?}")));
            }
            let rmax = r[1].ceil() as usize;
            if self.shape.iter().any(|&s| 2 * rmax + 1 > s) {
                return Err(Error::Invalid(format!("radius {} does not fit in shape {:?}", r[1], self.shape)));
            }
        }
        if self.n_blobs[0] == 0 || self.n_blobs[0] > self.n_blobs[1] {
            return Err(Error::Invalid(format!("degenerate blob count range {:?}", self.n_blobs)));
        }
        if self.distractor_cycle.iter().any(|c| !c.is_finite()) {
            return Err(Error::Invalid("distractor_cycle entries must be finite".into()));
        }
        if self.n_distractors[0] > self.n_distractors[1] {
            return Err(Error::Invalid(format!("bad distractor count range {:?}", self.n_distractors)));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::Invalid("noise_std must be finite and >= 0".into()));
        }
        Ok(())
    }
}

fn draw_ellipsoid<R: Rng>(spec: &SyntheticSpec, range: [f64; 2], rng: &mut R) -> ([f64; 3], [f64; 3]) {
    let radii: [f64; 3] = std::array::from_fn(|_| rng.random_range(range[0]..=range[1]));
    let center: [f64; 3] = std::array::from_fn(|a| {
        let r = radii[a].ceil();
        rng.random_range(r..=(spec.shape[a] as f64 - 1.0 - r))
    });
    (center, radii)
}

fn inside(p: [usize; 3], c: [f64; 3], r: [f64; 3]) -> bool {
    (0..3).map(|a| ((p[a] as f64 - c[a]) / r[a]).powi(2)).sum::<f64>() <= 1.0
}

/// One synthetic (volume, mask) pair.
pub fn generate_case(spec: &SyntheticSpec, seed: u64, index: usize) -> Result<(Volume, SegmentationMask)> {
    spec.validate()?;
    let mut rng = seeded_stream(seed, &format!("synth/{index}"));
    let n = rng.random_range(spec.n_blobs[0]..=spec.n_blobs[1]);
    let blobs: Vec<_> = (0..n).map(|_| draw_ellipsoid(spec, spec.radius, &mut rng)).collect();
    let nd = rng.random_range(spec.n_distractors[0]..=spec.n_distractors[1]);
    let distractors: Vec<_> = (0..nd).map(|_| draw_ellipsoid(spec, spec.distractor_radius, &mut rng)).collect();

    let sh = (spec.shape[0], spec.shape[1], spec.shape[2]);
    let mask = Array3::from_shape_fn(sh, |(i, j, k)| u8::from(blobs.iter().any(|&(c, r)| inside([i, j, k], c, r))));
    if mask.iter().all(|&v| v == 0) {
        return Err(Error::Invalid("generated an empty foreground".into()));
    }
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::Invalid(e.to_string()))?;
    let distractor_mean = match spec.distractor_cycle.len() {
        0 => spec.distractor_mean,
        n => spec.distractor_cycle[index % n],
    };
    let mut image = Array3::<f32>::zeros(sh);
    for ((idx, v), &m) in image.indexed_iter_mut().zip(mask.iter()) {
        let p = [idx.0, idx.1, idx.2];
        let mean = if m == 1 {
            spec.mean_fg
        } else if distractors.iter().any(|&(c, r)| inside(p, c, r)) {
            distractor_mean
        } else {
            spec.mean_bg
        };
        let e = if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
        *v = (mean + e) as f32;
    }
    let id = format!("case_{index:03}");
    Ok((Volume::new(image, [1.0; 3], id.clone())?, SegmentationMask::new(mask, [1.0; 3], id)?))
}

/// Writes `spec.n_volumes` cases plus `manifest.json` into `out_dir`.
/// Unlabeled training cases keep their masks on disk, listed only as oracle truth.
pub fn generate_synthetic_dataset(spec: &SyntheticSpec, seed: u64, out_dir: &Path, part: Partition) -> Result<Manifest> {
    spec.validate()?;
    if part.labeled == 0 {
        return Err(Error::Invalid("labeled count must be >= 1".into()));
    }
    if part.labeled + part.val + part.test > spec.n_volumes {
        return Err(Error::Invalid(format!(
            "partition {}+{}+{} exceeds {} volumes",
            part.labeled, part.val, part.test, spec.n_volumes
        )));
    }
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Data(format!("cannot create {}: {e}", out_dir.display())))?;
    let mut manifest = Manifest { root: out_dir.to_path_buf(), ..Default::default() };
    let val_start = spec.n_volumes - part.test - part.val;
    let test_start = spec.n_volumes - part.test;
    for i in 0..spec.n_volumes {
        let (vol, mask) = generate_case(spec, seed, i)?;
        let image = format!("{}.nii.gz", vol.id());
        let mask_file = format!("{}_mask.nii.gz", vol.id());
        save_volume(&vol, &out_dir.join(&image))?;
        save_mask(&mask, &out_dir.join(&mask_file))?;
        let entry = LabeledEntry { image: image.clone(), mask: mask_file.clone() };
        if i < part.labeled {
            manifest.train.labeled.push(entry);
        } else if i < val_start {
            manifest.train.unlabeled.push(image);
            manifest.oracle_truth.insert(vol.id().to_string(), mask_file);
        } else if i < test_start {
            manifest.val.labeled.push(entry);
        } else {
            manifest.test.labeled.push(entry);
        }
    }
    manifest.save(&out_dir.join("manifest.json"))?;
    Ok(manifest)
}
