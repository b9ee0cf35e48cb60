//! NIfTI-1 volume and mask I/O.

use crate::error::{Error, Result};
use crate::volume::{SegmentationMask, Spacing, Volume};
use ndarray::{Array3, Ix3};
use nifti::{IntoNdArray, NiftiHeader, NiftiObject, ReaderOptions};
use nifti::writer::WriterOptions;
use std::path::Path;

fn case_id(path: &Path) -> String {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.trim_end_matches(".gz").trim_end_matches(".nii").to_string()
}

fn read(path: &Path) -> Result<(Array3<f64>, Spacing)> {
    let obj = ReaderOptions::new()
        .read_file(path)
        .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
    let h = obj.header();
    if h.dim[0] != 3 && !(h.dim[0] > 3 && h.dim[4..].iter().take(h.dim[0] as usize - 3).all(|&d| d == 1)) {
        return Err(Error::Data(format!("{}: expected a 3D image, got rank {}", path.display(), h.dim[0])));
    }
    let spacing = [h.pixdim[1].abs(), h.pixdim[2].abs(), h.pixdim[3].abs()];
    let mut arr = obj.into_volume().into_ndarray::<f64>()?;
    while arr.ndim() > 3 {
        let last = ndarray::Axis(arr.ndim() - 1);
        arr = arr.index_axis_move(last, 0);
    }
    let arr = arr
        .into_dimensionality::<Ix3>()
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok((arr.as_standard_layout().into_owned(), spacing))
}

fn header(spacing: Spacing) -> NiftiHeader {
    let mut h = NiftiHeader::default();
    h.pixdim = [1.0, spacing[0], spacing[1], spacing[2], 1.0, 1.0, 1.0, 1.0];
    h.xyzt_units = 2;
    h
}

pub fn load_volume(path: &Path) -> Result<Volume> {
    let (arr, spacing) = read(path)?;
    Volume::new(arr.mapv(|v| v as f32), spacing, case_id(path))
}

/// Any nonzero voxel becomes foreground.
pub fn load_mask(path: &Path) -> Result<SegmentationMask> {
    let (arr, spacing) = read(path)?;
    SegmentationMask::new(arr.mapv(|v| u8::from(v != 0.0)), spacing, case_id(path))
}

/// Loads an image with its mask and checks that they agree.
pub fn load_pair(image: &Path, mask: &Path) -> Result<(Volume, SegmentationMask)> {
    let v = load_volume(image)?;
    let m = load_mask(mask)?;
    m.check_pair(&v).map_err(|e| Error::Data(format!("{} / {}: {e}", image.display(), mask.display())))?;
    Ok((v, m))
}

pub fn save_volume(vol: &Volume, path: &Path) -> Result<()> {
    let h = header(vol.spacing());
    WriterOptions::new(path).reference_header(&h).write_nifti(vol.data())?;
    Ok(())
}

pub fn save_mask(mask: &SegmentationMask, path: &Path) -> Result<()> {
    let h = header(mask.spacing());
    WriterOptions::new(path).reference_header(&h).write_nifti(mask.data())?;
    Ok(())
}

/// Writes a probability map (or any real field) as a float image.
pub fn save_field(data: &Array3<f32>, spacing: Spacing, path: &Path) -> Result<()> {
    let h = header(spacing);
    WriterOptions::new(path).reference_header(&h).write_nifti(data)?;
    Ok(())
}
