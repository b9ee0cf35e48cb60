#![allow(dead_code)]

use semisam::config::{validate_config, ExperimentConfig};
use semisam::data::{generate_synthetic_dataset, Manifest, Partition, Split, SyntheticSpec};
use semisam::generalist::{register_generalists, AdapterRegistry, GeneralistHandle};
use semisam::trainer::TrainData;
use serde_json::{json, Value};
use std::path::Path;
use std::sync::Arc;

pub fn small_spec(n: usize) -> SyntheticSpec {
    SyntheticSpec { n_volumes: n, shape: [20, 20, 20], radius: [3.0, 5.0], ..Default::default() }
}

pub fn small_dataset(dir: &Path, labeled: usize, test: usize) -> Manifest {
    generate_synthetic_dataset(&small_spec(8), 5, dir, Partition { labeled, val: 0, test }).unwrap()
}

pub fn load_train(m: &Manifest) -> TrainData {
    let idx = m.index(Split::Train).unwrap();
    TrainData {
        labeled: idx.load_labeled().unwrap(),
        unlabeled: idx.load_unlabeled().unwrap(),
        val: m.index(Split::Val).unwrap().load_labeled().unwrap(),
    }
}

pub fn tiny_config(strategy: &str, extra: Value) -> ExperimentConfig {
    let mut raw = json!({
        "strategy": strategy,
        "batch_size": 2,
        "patch_size": [8, 8, 8],
        "t_max": 8,
        "seed": 3,
        "depth": 2,
        "base_width": 2,
        "T_passes": 2,
        "val_every": 0,
        "generalists": [{"backend": "oracle", "flip_rate": 0.05, "radius": 1}],
    });
    for (k, v) in extra.as_object().unwrap() {
        raw[k] = v.clone();
    }
    validate_config(&raw).unwrap()
}

pub fn handles(cfg: &ExperimentConfig, m: &Manifest) -> Vec<GeneralistHandle> {
    register_generalists(&cfg.generalists, Arc::new(m.truth_registry().unwrap()), &AdapterRegistry::default()).unwrap()
}
