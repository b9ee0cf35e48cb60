//! JSON dataset manifest: per-split labeled / unlabeled case lists with
//! paths relative to the manifest file.

use super::io::{load_mask, load_pair, load_volume};
use crate::config::hex;
use crate::error::{Error, Result};
use crate::volume::{SegmentationMask, Volume};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledEntry {
    pub image: String,
    pub mask: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitEntries {
    #[serde(default)]
    pub labeled: Vec<LabeledEntry>,
    #[serde(default)]
    pub unlabeled: Vec<String>,
}

/// On-disk dataset description.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    #[serde(default)]
    pub train: SplitEntries,
    #[serde(default)]
    pub val: SplitEntries,
    #[serde(default)]
    pub test: SplitEntries,
    /// Hidden ground truth of unlabeled cases, keyed by case id. Only the
    /// oracle generalist reads it.
    #[serde(default)]
    pub oracle_truth: BTreeMap<String, String>,
    #[serde(skip)]
    pub root: PathBuf,
}

/// Resolved case lists of one split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetIndex {
    pub split: Split,
    pub labeled: Vec<(PathBuf, PathBuf)>,
    pub unlabeled: Vec<PathBuf>,
}

/// A z-scored image with its optional label.
#[derive(Debug, Clone)]
pub struct Case {
    pub volume: Volume,
    pub mask: Option<SegmentationMask>,
}

impl Case {
    pub fn id(&self) -> &str {
        self.volume.id()
    }

    pub fn shape(&self) -> [usize; 3] {
        self.volume.shape()
    }
}

/// Full-volume ground truth the oracle generalist may consult, keyed by case id.
pub type TruthRegistry = HashMap<String, Array3<u8>>;

impl Manifest {
    pub fn load(path: &Path) -> Result<Manifest> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Data(format!("cannot read manifest {}: {e}", path.display())))?;
        let mut m: Manifest = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("malformed manifest {}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    fn entries(&self, split: Split) -> &SplitEntries {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    pub fn index(&self, split: Split) -> Result<DatasetIndex> {
        let e = self.entries(split);
        let idx = DatasetIndex {
            split,
            labeled: e.labeled.iter().map(|l| (self.root.join(&l.image), self.root.join(&l.mask))).collect(),
            unlabeled: e.unlabeled.iter().map(|u| self.root.join(u)).collect(),
        };
        idx.validate()?;
        Ok(idx)
    }

    /// Loads the hidden masks listed under `oracle_truth`.
    pub fn truth_registry(&self) -> Result<TruthRegistry> {
        self.oracle_truth
            .iter()
            .map(|(id, p)| Ok((id.clone(), load_mask(&self.root.join(p))?.data().clone())))
            .collect()
    }
}

/// SHA-256 of a file's bytes.
pub fn file_hash(path: &Path) -> Result<String> {
    Ok(hex(&Sha256::digest(std::fs::read(path)?)))
}

impl DatasetIndex {
    pub fn validate(&self) -> Result<()> {
        if self.split == Split::Train && self.labeled.is_empty() {
            return Err(Error::Data("training split needs at least one labeled case".into()));
        }
        let labeled: HashSet<&PathBuf> = self.labeled.iter().map(|(i, _)| i).collect();
        if let Some(dup) = self.unlabeled.iter().find(|u| labeled.contains(u)) {
            return Err(Error::Data(format!("{} is both labeled and unlabeled", dup.display())));
        }
        Ok(())
    }

    /// Loads labeled cases, z-scoring each image.
    pub fn load_labeled(&self) -> Result<Vec<Case>> {
        self.labeled
            .iter()
            .map(|(i, m)| {
                let (v, mask) = load_pair(i, m)?;
                Ok(Case { volume: v.z_scored(), mask: Some(mask) })
            })
            .collect()
    }

    /// Loads unlabeled cases, z-scoring each image.
    pub fn load_unlabeled(&self) -> Result<Vec<Case>> {
        self.unlabeled
            .iter()
            .map(|p| Ok(Case { volume: load_volume(p)?.z_scored(), mask: None }))
            .collect()
    }
}
