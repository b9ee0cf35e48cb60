use super::{checkpoint::save_checkpoint, train_step, LossBreakdown, TrainState};
use crate::config::ExperimentConfig;
use crate::data::{compose_batch, Case};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::generalist::GeneralistHandle;
use crate::rng::seeded_stream;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::Path;

pub struct TrainData {
    pub labeled: Vec<Case>,
    pub unlabeled: Vec<Case>,
    pub val: Vec<Case>,
}

pub struct TrainOutcome {
    pub state: TrainState,
    pub history: Vec<LossBreakdown>,
    /// Iteration and mean validation Dice of `best.ckpt`.
    pub best_val: Option<(u64, f64)>,
}

pub const LOG_HEADER: &str = "t,lr,lambda,beta,sup,unsup,sam_total,total,val_dice";

fn fingerprints(h: &[GeneralistHandle]) -> Vec<String> {
    h.iter().map(GeneralistHandle::fingerprint).collect()
}

/// Runs iterations `state.t..t_max`, appending to `out_dir/log.csv` and
/// writing checkpoints under `out_dir/checkpoints`. A fresh state is
/// initialized from the config when `resume` is `None`.
pub fn train(
    cfg: &ExperimentConfig,
    data: &TrainData,
    handles: &[GeneralistHandle],
    out_dir: &Path,
    resume: Option<TrainState>,
) -> Result<TrainOutcome> {
    let mut state = match resume {
        Some(s) => {
            s.check_compatible(cfg)?;
            s
        }
        None => TrainState::init(cfg)?,
    };
    for c in data.labeled.iter().chain(&data.unlabeled).chain(&data.val) {
        cfg.check_volume_shape(c.shape())?;
    }
    let ckdir = out_dir.join("checkpoints");
    fs::create_dir_all(&ckdir)?;
    let log_path = out_dir.join("log.csv");
    let fresh_log = state.t == 0 || !log_path.exists();
    let mut log = OpenOptions::new()
        .create(true)
        .write(true)
        .append(!fresh_log)
        .truncate(fresh_log)
        .open(&log_path)?;
    if fresh_log {
        writeln!(log, "{LOG_HEADER}")?;
    }

    let before = fingerprints(handles);
    let mut history = Vec::new();
    let mut best_val: Option<(u64, f64)> = None;
    while state.t < cfg.t_max {
        let t = state.t;
        let mut rng = seeded_stream(cfg.seed, &format!("batch/{t}"));
        let batch = compose_batch(&data.labeled, &data.unlabeled, cfg.batch_size, cfg.patch_size, &mut rng)?;
        let b = train_step(&mut state, &batch, handles, cfg)?;
        let done = state.t;

        let mut val_dice = String::new();
        if !data.val.is_empty() && cfg.val_every > 0 && (done % cfg.val_every == 0 || done == cfg.t_max) {
            let d = evaluate(&state.arch, &state.student, &data.val, cfg.stride())?.mean.dice;
            val_dice = d.to_string();
            if best_val.is_none_or(|(_, b)| d > b) {
                best_val = Some((done, d));
                save_checkpoint(&state, &ckdir.join("best.ckpt"))?;
            }
        }
        writeln!(
            log,
            "{done},{},{},{},{},{},{},{},{val_dice}",
            b.lr,
            b.lambda,
            b.beta,
            b.sup,
            b.unsup,
            b.sam_total(),
            b.total
        )?;
        if cfg.checkpoint_every > 0 && done % cfg.checkpoint_every == 0 {
            save_checkpoint(&state, &ckdir.join(format!("ckpt_{done:06}.ckpt")))?;
        }
        log::debug!(
            "t={done} total={:.5} sup={:.5} unsup={:.5} sam={:.5} skipped={}",
            b.total,
            b.sup,
            b.unsup,
            b.sam_total(),
            b.sam_skipped
        );
        history.push(b);
    }
    log.flush()?;
    if fingerprints(handles) != before {
        return Err(Error::Generalist("generalist state changed during training".into()));
    }
    save_checkpoint(&state, &ckdir.join("final.ckpt"))?;
    Ok(TrainOutcome { state, history, best_val })
}
