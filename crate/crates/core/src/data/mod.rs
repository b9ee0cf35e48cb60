//! Synthetic data, volume I/O, patch sampling, and batch composition.

pub mod io;
pub mod manifest;
pub mod patch;
pub mod synth;

pub use io::{load_mask, load_pair, load_volume, save_field, save_mask, save_volume};
pub use manifest::{file_hash, Case, DatasetIndex, Manifest, Split, TruthRegistry};
pub use patch::{augment, compose_batch, sample_patch, AugOp, Batch, Patch, PatchSource};
pub use synth::{generate_case, generate_synthetic_dataset, Partition, SyntheticSpec};
