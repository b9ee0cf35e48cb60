//! Call contract for out-of-tree generalist adapters, a named factory
//! registry, and a conformance suite runnable against any adapter.

use super::prompt::Prompt;
use super::stub::{stub_predict, StubSpec};
use crate::error::{Error, Result};
use ndarray::Array3;
use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

/// A frozen promptable model. Given a patch (z-scored intensities, shape
/// `[D, H, W]`) and a prompt valid for that shape, returns per-voxel
/// foreground probabilities of the same shape, each in `[0, 1]`. Calls must
/// be deterministic and must not mutate the model.
pub trait ExternalAdapter: Send + Sync {
    fn name(&self) -> &str;
    fn predict(&self, image: &Array3<f32>, prompt: &Prompt) -> Result<Array3<f32>>;
}

pub type AdapterFactory = fn(checkpoint: &Path) -> Result<Box<dyn ExternalAdapter>>;

/// Reference adapter wrapping the stub backend.
pub struct StubAdapter(pub StubSpec);

impl ExternalAdapter for StubAdapter {
    fn name(&self) -> &str {
        "stub"
    }

    fn predict(&self, image: &Array3<f32>, prompt: &Prompt) -> Result<Array3<f32>> {
        stub_predict(&self.0, image, prompt)
    }
}

fn stub_factory(_checkpoint: &Path) -> Result<Box<dyn ExternalAdapter>> {
    Ok(Box::new(StubAdapter(StubSpec::default())))
}

#[derive(Clone)]
pub struct AdapterRegistry {
    factories: BTreeMap<String, AdapterFactory>,
}

impl Default for AdapterRegistry {
    /// Registry holding the built-in `stub` reference adapter.
    fn default() -> Self {
        let mut r = AdapterRegistry { factories: BTreeMap::new() };
        r.register("stub", stub_factory);
        r
    }
}

impl AdapterRegistry {
    pub fn register(&mut self, name: &str, factory: AdapterFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn load(&self, name: &str, checkpoint: &Path) -> Result<Box<dyn ExternalAdapter>> {
        let f = self
            .factories
            .get(name)
            .ok_or_else(|| Error::Generalist(format!("no adapter registered as `{name}`")))?;
        f(checkpoint).map_err(|e| Error::Generalist(format!("adapter `{name}` failed to load {}: {e}", checkpoint.display())))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClauseStatus {
    Pass,
    Warn,
    Fail,
}

#[derive(Debug, Clone)]
pub struct ClauseResult {
    pub clause: &'static str,
    pub status: ClauseStatus,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct ConformanceReport {
    pub adapter: String,
    pub clauses: Vec<ClauseResult>,
}

impl ConformanceReport {
    pub fn passed(&self) -> bool {
        self.clauses.iter().all(|c| c.status != ClauseStatus::Fail)
    }

    pub fn status(&self, clause: &str) -> Option<ClauseStatus> {
        self.clauses.iter().find(|c| c.clause == clause).map(|c| c.status)
    }
}

impl fmt::Display for ConformanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "adapter `{}`", self.adapter)?;
        for c in &self.clauses {
            writeln!(f, "  {:?} {}: {}", c.status, c.clause, c.detail)?;
        }
        Ok(())
    }
}

/// 16^3 probe image with two bright, well separated cubes.
pub fn probe_image() -> Array3<f32> {
    Array3::from_shape_fn((16, 16, 16), |(i, j, k)| {
        let in_cube = |c: usize| [i, j, k].iter().all(|&p| p + 2 >= c && p <= c + 2);
        if in_cube(4) || in_cube(11) {
            2.0
        } else {
            -0.5
        }
    })
}

pub fn run_conformance(adapter: &dyn ExternalAdapter) -> ConformanceReport {
    let image = probe_image();
    let shape = [16usize, 16, 16];
    let first = Prompt::positive_points([[4, 4, 4]]);
    let second = Prompt::positive_points([[11, 11, 11]]);
    let mask = Prompt::Mask(image.mapv(|v| u8::from(v > 0.0)));
    let mut clauses = Vec::new();
    let mut push = |clause, status, detail: String| clauses.push(ClauseResult { clause, status, detail });

    let outputs: Vec<(&str, Result<Array3<f32>>)> = vec![
        ("point", adapter.predict(&image, &first)),
        ("second point", adapter.predict(&image, &second)),
        ("mask", adapter.predict(&image, &mask)),
    ];
    let errors: Vec<String> = outputs
        .iter()
        .filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n} prompt: {e}")))
        .collect();
    if errors.is_empty() {
        push("call", ClauseStatus::Pass, "accepts point and mask prompts".into());
    } else {
        push("call", ClauseStatus::Fail, errors.join("; "));
    }
    let ok: Vec<(&str, &Array3<f32>)> = outputs.iter().filter_map(|(n, r)| r.as_ref().ok().map(|a| (*n, a))).collect();

    let bad_shape: Vec<String> =
        ok.iter().filter(|(_, a)| a.shape() != shape).map(|(n, a)| format!("{n}: {:?}", a.shape())).collect();
    if bad_shape.is_empty() {
        push("shape", ClauseStatus::Pass, "output shape equals patch shape".into());
    } else {
        push("shape", ClauseStatus::Fail, bad_shape.join("; "));
    }

    let out_of_range: usize =
        ok.iter().map(|(_, a)| a.iter().filter(|v| !(v.is_finite() && (0.0..=1.0).contains(*v))).count()).sum();
    if out_of_range == 0 {
        push("range", ClauseStatus::Pass, "all values finite in [0,1]".into());
    } else {
        push("range", ClauseStatus::Fail, format!("{out_of_range} voxels outside [0,1]"));
    }

    match (adapter.predict(&image, &first), ok.first()) {
        (Ok(again), Some((_, a))) if &&again == a => {
            push("determinism", ClauseStatus::Pass, "repeated call identical".into())
        }
        _ => push("determinism", ClauseStatus::Fail, "repeated call differs or fails".into()),
    }

    match (&outputs[0].1, &outputs[1].1) {
        (Ok(a), Ok(b)) if a != b => push("sensitivity", ClauseStatus::Pass, "output depends on the prompt".into()),
        (Ok(_), Ok(_)) => push(
            "sensitivity",
            ClauseStatus::Warn,
            "identical output for disjoint point prompts; the adapter may ignore prompts".into(),
        ),
        _ => push("sensitivity", ClauseStatus::Fail, "could not compare prompt responses".into()),
    }
    ConformanceReport { adapter: adapter.name().to_string(), clauses }
}
