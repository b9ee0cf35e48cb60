//! Experiment configuration: a flat JSON document with defaults and
//! invariant checks.

use crate::error::{Error, Result};
use crate::generalist::GeneralistDescriptor;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};
use std::fmt;
use std::path::Path;

macro_rules! string_enum {
    ($name:ident, $what:literal, { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        #[serde(try_from = "String", into = "String")]
        pub enum $name { $($variant),+ }

        impl TryFrom<String> for $name {
            type Error = String;
            fn try_from(s: String) -> std::result::Result<Self, String> {
                match s.as_str() {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(concat!("unknown ", $what, " `{}`"), other)),
                }
            }
        }

        impl From<$name> for String {
            fn from(v: $name) -> String {
                v.to_string()
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($name::$variant => $text),+ })
            }
        }
    };
}

string_enum!(Strategy, "strategy", { Mt => "mt", Uamt => "uamt", Dtc => "dtc", Dan => "dan" });
string_enum!(PromptStrategy, "prompt_strategy", { Mask => "mask", Point => "point", Both => "both" });
string_enum!(ConfidenceMode, "confidence_mode", { None => "none", BinaryThreshold => "binary_threshold" });
string_enum!(Discrepancy, "discrepancy", { Variance => "variance", EntropyOfMean => "entropy_of_mean" });

const REQUIRED: [&str; 5] = ["strategy", "batch_size", "patch_size", "t_max", "seed"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub strategy: Strategy,
    pub batch_size: usize,
    pub patch_size: [usize; 3],
    pub t_max: u64,
    pub seed: u64,

    #[serde(default)]
    pub use_generalist_regularization: bool,
    #[serde(default)]
    pub generalists: Vec<GeneralistDescriptor>,
    #[serde(default = "default_prompt_strategy")]
    pub prompt_strategy: PromptStrategy,
    #[serde(default = "default_confidence_mode")]
    pub confidence_mode: ConfidenceMode,
    #[serde(default = "default_discrepancy")]
    pub discrepancy: Discrepancy,
    #[serde(default = "default_n_point_variants")]
    pub n_point_variants: usize,
    #[serde(default = "default_points_per_variant")]
    pub points_per_variant: usize,
    #[serde(default = "default_half")]
    pub binarization_threshold: f64,

    #[serde(default = "default_weight")]
    pub lambda_max: f64,
    #[serde(default = "default_weight")]
    pub beta_max: f64,
    #[serde(default = "default_u_th_max")]
    pub u_th_max: f64,
    #[serde(default = "default_tau_max")]
    pub tau_max: f64,
    #[serde(default = "default_k")]
    pub k: f64,
    #[serde(default = "default_t_passes", rename = "T_passes", alias = "t_passes")]
    pub t_passes: usize,
    #[serde(default = "default_levelset_weight")]
    pub levelset_weight: f64,

    #[serde(default = "default_lr0")]
    pub lr0: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_ema_alpha")]
    pub ema_alpha: f64,

    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_base_width")]
    pub base_width: usize,
    #[serde(default = "default_noise")]
    pub input_noise_std: f64,
    #[serde(default = "default_noise")]
    pub dropout: f64,

    /// Checkpoint cadence in iterations; 0 keeps only initial and final.
    #[serde(default)]
    pub checkpoint_every: u64,
    /// Validation cadence in iterations; 0 disables validation.
    #[serde(default = "default_val_every")]
    pub val_every: u64,
    /// Sliding-window stride; defaults to half the patch.
    #[serde(default)]
    pub stride: Option<[usize; 3]>,

    /// Dataset manifest path.
    #[serde(default)]
    pub data: Option<String>,
    #[serde(default)]
    pub out_dir: Option<String>,
}

fn default_prompt_strategy() -> PromptStrategy {
    PromptStrategy::Both
}
fn default_confidence_mode() -> ConfidenceMode {
    ConfidenceMode::BinaryThreshold
}
fn default_discrepancy() -> Discrepancy {
    Discrepancy::Variance
}
fn default_n_point_variants() -> usize {
    2
}
fn default_points_per_variant() -> usize {
    3
}
fn default_half() -> f64 {
    0.5
}
fn default_weight() -> f64 {
    0.1
}
fn default_u_th_max() -> f64 {
    std::f64::consts::LN_2
}
fn default_tau_max() -> f64 {
    0.05
}
fn default_k() -> f64 {
    1500.0
}
fn default_t_passes() -> usize {
    4
}
fn default_levelset_weight() -> f64 {
    0.3
}
fn default_lr0() -> f64 {
    0.01
}
fn default_momentum() -> f64 {
    0.9
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_ema_alpha() -> f64 {
    0.99
}
fn default_depth() -> usize {
    3
}
fn default_base_width() -> usize {
    8
}
fn default_noise() -> f64 {
    0.1
}
fn default_val_every() -> u64 {
    100
}

impl ExperimentConfig {
    /// Minimal valid config, handy for tests and examples.
    pub fn minimal(strategy: Strategy, batch_size: usize, patch_size: [usize; 3], t_max: u64, seed: u64) -> Self {
        let raw = serde_json::json!({
            "strategy": strategy.to_string(),
            "batch_size": batch_size,
            "patch_size": patch_size,
            "t_max": t_max,
            "seed": seed,
        });
        validate_config(&raw).expect("minimal config is valid")
    }

    /// Whether the generalist term participates in training at all.
    pub fn sam_enabled(&self) -> bool {
        self.use_generalist_regularization && self.beta_max > 0.0
    }

    pub fn stride(&self) -> [usize; 3] {
        self.stride.unwrap_or(self.patch_size.map(|p| (p / 2).max(1)))
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex(&Sha256::digest(&bytes))
    }

    /// Training hyperparameters only, ignoring locations on disk.
    pub fn training_hash(&self) -> String {
        let mut c = self.clone();
        c.data = None;
        c.out_dir = None;
        c.hash()
    }

    fn check(&self) -> Result<()> {
        if self.batch_size == 0 || self.batch_size % 2 != 0 {
            return Err(Error::config("batch_size", "batch_size must be even"));
        }
        if self.patch_size.contains(&0) {
            return Err(Error::config("patch_size", "patch_size components must be >= 1"));
        }
        for (key, v) in [("lambda_max", self.lambda_max), ("beta_max", self.beta_max)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(key, format!("{key} must be finite and >= 0")));
            }
        }
        if !(self.u_th_max >= 0.0 && self.u_th_max.is_finite()) {
            return Err(Error::config("u_th_max", "u_th_max must be finite and >= 0"));
        }
        if !(self.tau_max >= 0.0 && self.tau_max.is_finite()) {
            return Err(Error::config("tau_max", "tau_max must be finite and >= 0"));
        }
        if !(self.k > 0.0) {
            return Err(Error::config("k", "k must be > 0"));
        }
        if self.t_passes < 2 {
            return Err(Error::config("T_passes", "T_passes must be >= 2"));
        }
        if !(self.lr0 >= 0.0) {
            return Err(Error::config("lr0", "lr0 must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("momentum", "momentum must be in [0,1)"));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::config("weight_decay", "weight_decay must be >= 0"));
        }
        if !(0.0..1.0).contains(&self.ema_alpha) {
            return Err(Error::config("ema_alpha", "ema_alpha must be in [0,1)"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config("dropout", "dropout must be in [0,1)"));
        }
        if !(self.input_noise_std >= 0.0) {
            return Err(Error::config("input_noise_std", "input_noise_std must be >= 0"));
        }
        if !(self.binarization_threshold > 0.0 && self.binarization_threshold < 1.0) {
            return Err(Error::config("binarization_threshold", "binarization_threshold must be in (0,1)"));
        }
        if self.n_point_variants == 0 {
            return Err(Error::config("n_point_variants", "n_point_variants must be >= 1"));
        }
        if self.points_per_variant == 0 {
            return Err(Error::config("points_per_variant", "points_per_variant must be >= 1"));
        }
        if self.depth == 0 || self.base_width == 0 {
            return Err(Error::config("depth", "depth and base_width must be >= 1"));
        }
        let div = 1usize << (self.depth - 1);
        if self.patch_size.iter().any(|p| p % div != 0) {
            return Err(Error::config(
                "patch_size",
                format!("patch_size must be divisible by {div} for depth {}", self.depth),
            ));
        }
        if let Some(s) = self.stride {
            if s.contains(&0) || s.iter().zip(&self.patch_size).any(|(a, b)| a > b) {
                return Err(Error::config("stride", "stride must be in [1, patch_size] per axis"));
            }
        }
        if self.use_generalist_regularization && self.generalists.is_empty() {
            return Err(Error::config(
                "generalists",
                "use_generalist_regularization requires at least one generalist",
            ));
        }
        for (i, g) in self.generalists.iter().enumerate() {
            g.validate().map_err(|m| Error::config(format!("generalists.{i}"), m))?;
        }
        Ok(())
    }

    /// Fails when the patch does not fit inside a training volume.
    pub fn check_volume_shape(&self, shape: [usize; 3]) -> Result<()> {
        if self.patch_size.iter().zip(&shape).any(|(p, s)| p > s) {
            return Err(Error::config(
                "patch_size",
                format!("patch_size {:?} exceeds volume shape {shape:?}", self.patch_size),
            ));
        }
        Ok(())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Parses and validates a raw JSON record, applying defaults.
pub fn validate_config(raw: &Value) -> Result<ExperimentConfig> {
    let obj = raw.as_object().ok_or_else(|| Error::config("<root>", "config must be a JSON object"))?;
    for key in REQUIRED {
        if !obj.contains_key(key) {
            return Err(Error::config(key, format!("missing required key `{key}`")));
        }
    }
    let cfg: ExperimentConfig = serde_path_to_error::deserialize(raw).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = match inner.strip_prefix("unknown field `") {
            Some(rest) => rest.split('`').next().unwrap_or(&path).to_string(),
            None => path,
        };
        Error::config(key, inner)
    })?;
    cfg.check()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::config("<file>", format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::config("<file>", format!("malformed JSON: {e}")))
}

/// Applies a `dot.path=value` override. The value is parsed as JSON when
/// possible and taken as a plain string otherwise.
pub fn apply_override(raw: &mut Value, spec: &str) -> Result<()> {
    let (path, text) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let value = serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()));
    let mut cur = raw;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        cur = match cur {
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            Value::Array(items) => {
                let idx: usize = part
                    .parse()
                    .map_err(|_| Error::config(path, format!("`{part}` is not an array index")))?;
                let slot = items
                    .get_mut(idx)
                    .ok_or_else(|| Error::config(path, format!("index {idx} out of range")))?;
                if last {
                    *slot = value;
                    return Ok(());
                }
                slot
            }
            _ => return Err(Error::config(path, format!("cannot descend into `{part}`"))),
        };
    }
    Err(Error::config(path, "empty override path"))
}
