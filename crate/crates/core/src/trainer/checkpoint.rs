//! Checkpoint archive: `SSCK` magic, u32 format version, u64 header length,
//! a JSON header, then every tensor as little-endian f32 in header order.
//!
//! The header holds the architecture descriptors, strategy, iteration
//! counter, config hash, and a table of `{group, name, shape, offset, len}`
//! entries (offsets in scalars). Groups are `student`, `teacher`,
//! `evaluator`, `student_momentum`, and `evaluator_momentum`.

use super::TrainState;
use crate::config::Strategy;
use crate::error::{Error, Result};
use crate::nn::ParamSet;
use crate::specialist::{EvaluatorArch, UNetArch};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

const MAGIC: &[u8; 4] = b"SSCK";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Entry {
    group: String,
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    arch: UNetArch,
    evaluator_arch: Option<EvaluatorArch>,
    strategy: Strategy,
    t: u64,
    config_hash: String,
    tensors: Vec<Entry>,
}

fn groups(s: &TrainState) -> Vec<(&'static str, &ParamSet<f32>)> {
    let mut g = vec![("student", &s.student), ("student_momentum", &s.student_momentum)];
    if let Some(t) = &s.teacher {
        g.push(("teacher", t));
    }
    if let Some(e) = &s.evaluator {
        g.push(("evaluator", e));
    }
    if let Some(m) = &s.evaluator_momentum {
        g.push(("evaluator_momentum", m));
    }
    g
}

pub fn save_checkpoint(state: &TrainState, path: &Path) -> Result<()> {
    let mut tensors = Vec::new();
    let mut offset = 0;
    for (group, set) in groups(state) {
        for t in &set.tensors {
            tensors.push(Entry { group: group.into(), name: t.name.clone(), shape: t.shape.clone(), offset, len: t.data.len() });
            offset += t.data.len();
        }
    }
    let header = Header {
        arch: state.arch.clone(),
        evaluator_arch: state.evaluator_arch.clone(),
        strategy: state.strategy,
        t: state.t,
        config_hash: state.config_hash.clone(),
        tensors,
    };
    let json = serde_json::to_vec(&header)?;
    let mut buf = Vec::with_capacity(16 + json.len() + 4 * offset);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for (_, set) in groups(state) {
        for v in set.iter_scalars() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&buf)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::Checkpoint(format!("{}: {what}", path.display()))
}

pub fn load_checkpoint(path: &Path) -> Result<TrainState> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .map_err(|e| corrupt(path, e))?
        .read_to_end(&mut bytes)?;
    if bytes.len() < 16 || &bytes[..4] != MAGIC {
        return Err(corrupt(path, "not a checkpoint archive"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != FORMAT_VERSION {
        log::warn!("{}: format version {version}, expected {FORMAT_VERSION}", path.display());
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| corrupt(path, "truncated header"))?;
    let header: Header = serde_json::from_slice(body).map_err(|e| corrupt(path, e))?;
    let data = &bytes[16 + hlen..];
    let total: usize = header.tensors.iter().map(|e| e.len).sum();
    if data.len() != 4 * total {
        return Err(corrupt(path, format!("expected {} data bytes, found {}", 4 * total, data.len())));
    }
    let mut sets: Vec<(String, ParamSet<f32>)> = Vec::new();
    for e in &header.tensors {
        if e.shape.iter().product::<usize>() != e.len || e.offset + e.len > total {
            return Err(corrupt(path, format!("bad table entry {}", e.name)));
        }
        let vals: Vec<f32> = data[4 * e.offset..4 * (e.offset + e.len)]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        if sets.last().is_none_or(|(g, _)| *g != e.group) {
            sets.push((e.group.clone(), ParamSet::default()));
        }
        sets.last_mut().unwrap().1.push(e.name.clone(), e.shape.clone(), vals);
    }
    let mut take = |g: &str| sets.iter().position(|(n, _)| n == g).map(|i| sets.remove(i).1);
    let student = take("student").ok_or_else(|| corrupt(path, "missing student"))?;
    let student_momentum = take("student_momentum").ok_or_else(|| corrupt(path, "missing momentum"))?;
    let state = TrainState {
        arch: header.arch,
        evaluator_arch: header.evaluator_arch,
        strategy: header.strategy,
        teacher: take("teacher"),
        evaluator: take("evaluator"),
        evaluator_momentum: take("evaluator_momentum"),
        student,
        student_momentum,
        t: header.t,
        config_hash: header.config_hash,
    };
    state.check_structure().map_err(|e| corrupt(path, e))?;
    Ok(state)
}
