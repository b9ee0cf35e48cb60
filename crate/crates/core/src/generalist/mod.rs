//! Frozen promptable generalist models: oracle and stub backends, an
//! external adapter contract, and the multi-generalist registry.

pub mod external;
pub mod oracle;
pub mod prompt;
pub mod stub;

use crate::config::hex;
use crate::data::{PatchSource, TruthRegistry};
use crate::error::{Error, Result};
use ndarray::Array3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;
use std::sync::Arc;

pub use external::{run_conformance, AdapterRegistry, ClauseStatus, ConformanceReport, ExternalAdapter};
pub use oracle::{CorruptionSpec, OracleBackend, RegionBias};
pub use prompt::{snapped_centroid, Prompt, PromptPoint};
pub use stub::StubSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExternalSpec {
    pub adapter: String,
    pub checkpoint: String,
}

/// Backend selection as written under `generalists` in the config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "lowercase")]
pub enum GeneralistDescriptor {
    Oracle(CorruptionSpec),
    Stub(StubSpec),
    External(ExternalSpec),
}

impl GeneralistDescriptor {
    pub fn validate(&self) -> std::result::Result<(), String> {
        match self {
            GeneralistDescriptor::Oracle(s) => s.validate(),
            GeneralistDescriptor::Stub(s) if !(s.radius >= 0.0) => Err("stub radius must be >= 0".into()),
            _ => Ok(()),
        }
    }

    pub fn digest(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("descriptor serializes")))
    }
}

enum Backend {
    Oracle(OracleBackend),
    Stub(StubSpec),
    External(Box<dyn ExternalAdapter>),
}

/// A registered, read-only generalist.
pub struct GeneralistHandle {
    descriptor: GeneralistDescriptor,
    backend: Backend,
}

impl GeneralistHandle {
    pub fn descriptor(&self) -> &GeneralistDescriptor {
        &self.descriptor
    }

    /// Generalists are never trained.
    pub fn frozen(&self) -> bool {
        true
    }

    /// Digest of everything that determines the handle's behaviour.
    pub fn fingerprint(&self) -> String {
        self.descriptor.digest()
    }

    /// Foreground probabilities for `image` under `prompt`. `source` lets the
    /// oracle locate its hidden ground truth; other backends ignore it.
    pub fn predict(&self, image: &Array3<f32>, prompt: &Prompt, source: &PatchSource) -> Result<Array3<f32>> {
        let sh = image.shape();
        prompt.validate([sh[0], sh[1], sh[2]])?;
        let out = match &self.backend {
            Backend::Oracle(o) => o.predict(image, prompt, source)?,
            Backend::Stub(s) => stub::stub_predict(s, image, prompt)?,
            Backend::External(a) => a.predict(image, prompt)?,
        };
        if out.shape() != image.shape() {
            return Err(Error::Generalist(format!("output {:?} for patch {:?}", out.shape(), image.shape())));
        }
        if out.iter().any(|v| !(v.is_finite() && (0.0..=1.0).contains(v))) {
            return Err(Error::Generalist("output outside [0,1]".into()));
        }
        Ok(out)
    }
}

/// Builds handles in descriptor order.
pub fn register_generalists(
    descriptors: &[GeneralistDescriptor],
    truth: Arc<TruthRegistry>,
    adapters: &AdapterRegistry,
) -> Result<Vec<GeneralistHandle>> {
    if descriptors.is_empty() {
        return Err(Error::config("generalists", "at least one generalist is required"));
    }
    descriptors
        .iter()
        .map(|d| {
            d.validate().map_err(Error::Generalist)?;
            let backend = match d {
                GeneralistDescriptor::Oracle(s) => Backend::Oracle(OracleBackend::new(s.clone(), truth.clone())?),
                GeneralistDescriptor::Stub(s) => Backend::Stub(s.clone()),
                GeneralistDescriptor::External(e) => Backend::External(adapters.load(&e.adapter, Path::new(&e.checkpoint))?),
            };
            Ok(GeneralistHandle { descriptor: d.clone(), backend })
        })
        .collect()
}
