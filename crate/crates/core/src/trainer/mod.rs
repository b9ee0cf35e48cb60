//! Training state, one optimization step, checkpoints and the training loop.

pub mod checkpoint;
pub mod loss;
pub mod run;
pub mod sgd;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use loss::{total_loss, StepGradients};
pub use run::{train, TrainData, TrainOutcome};
pub use sgd::sgd_step;

use crate::config::{ExperimentConfig, Strategy};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::generalist::GeneralistHandle;
use crate::nn::ParamSet;
use crate::rng::seeded_stream;
use crate::specialist::{ema_update_inplace, EvaluatorArch, UNetArch};
use serde::Serialize;

/// Per-iteration loss terms. `total = sup + lambda * unsup + beta * sum(sam)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub t: u64,
    pub lr: f64,
    pub lambda: f64,
    pub beta: f64,
    pub sup: f64,
    pub unsup: f64,
    /// One entry per generalist; empty when generalist terms are off.
    pub sam: Vec<f64>,
    /// Unlabeled patches for which no prompt could be built.
    pub sam_skipped: usize,
    pub total: f64,
    pub evaluator_loss: Option<f64>,
}

impl LossBreakdown {
    pub fn sam_total(&self) -> f64 {
        self.sam.iter().fold(0.0, |a, b| a + b)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub arch: UNetArch,
    pub evaluator_arch: Option<EvaluatorArch>,
    pub strategy: Strategy,
    pub student: ParamSet<f32>,
    pub teacher: Option<ParamSet<f32>>,
    pub evaluator: Option<ParamSet<f32>>,
    pub student_momentum: ParamSet<f32>,
    pub evaluator_momentum: Option<ParamSet<f32>>,
    /// Completed iterations.
    pub t: u64,
    pub config_hash: String,
}

pub fn arch_for(cfg: &ExperimentConfig) -> Result<UNetArch> {
    UNetArch::new(cfg.depth, cfg.base_width, cfg.patch_size, cfg.strategy == Strategy::Dtc)
}

impl TrainState {
    pub fn init(cfg: &ExperimentConfig) -> Result<Self> {
        let arch = arch_for(cfg)?;
        let student: ParamSet<f32> = arch.init_params(&mut seeded_stream(cfg.seed, "init/student"));
        let teacher = matches!(cfg.strategy, Strategy::Mt | Strategy::Uamt).then(|| student.clone());
        let (evaluator_arch, evaluator) = if cfg.strategy == Strategy::Dan {
            let ea = EvaluatorArch::default();
            let p: ParamSet<f32> = ea.init_params(&mut seeded_stream(cfg.seed, "init/evaluator"));
            (Some(ea), Some(p))
        } else {
            (None, None)
        };
        Ok(TrainState {
            student_momentum: student.zeros_like(),
            evaluator_momentum: evaluator.as_ref().map(ParamSet::zeros_like),
            arch,
            evaluator_arch,
            strategy: cfg.strategy,
            student,
            teacher,
            evaluator,
            t: 0,
            config_hash: cfg.training_hash(),
        })
    }

    /// Parameter sets agree with the architectures and the strategy.
    pub fn check_structure(&self) -> Result<()> {
        self.arch.check_params(&self.student)?;
        if !self.student.same_structure(&self.student_momentum) {
            return Err(Error::Checkpoint("momentum does not match student".into()));
        }
        if let Some(t) = &self.teacher {
            self.arch.check_params(t)?;
        }
        let want_teacher = matches!(self.strategy, Strategy::Mt | Strategy::Uamt);
        let want_eval = self.strategy == Strategy::Dan;
        if self.teacher.is_some() != want_teacher
            || self.evaluator.is_some() != want_eval
            || self.evaluator_arch.is_some() != want_eval
            || self.evaluator_momentum.is_some() != want_eval
            || self.arch.dual_head != (self.strategy == Strategy::Dtc)
        {
            return Err(Error::Checkpoint(format!("auxiliary networks do not match strategy {}", self.strategy)));
        }
        if let (Some(ea), Some(e), Some(m)) = (&self.evaluator_arch, &self.evaluator, &self.evaluator_momentum) {
            let fresh: ParamSet<f32> = ea.init_params(&mut seeded_stream(0, "shape"));
            if !fresh.same_structure(e) || !fresh.same_structure(m) {
                return Err(Error::Checkpoint("evaluator parameters do not match its architecture".into()));
            }
        }
        Ok(())
    }

    pub(crate) fn check_strategy(&self, s: Strategy) -> Result<()> {
        if self.strategy != s {
            return Err(Error::Invalid(format!("state trained with {} used with {s}", self.strategy)));
        }
        self.check_structure()
    }

    /// Architecture must match exactly; a differing config hash only warns.
    pub fn check_compatible(&self, cfg: &ExperimentConfig) -> Result<()> {
        let arch = arch_for(cfg)?;
        if arch != self.arch || cfg.strategy != self.strategy {
            return Err(Error::Checkpoint(format!(
                "checkpoint architecture {:?} ({}) does not match config {:?} ({})",
                self.arch, self.strategy, arch, cfg.strategy
            )));
        }
        if self.config_hash != cfg.training_hash() {
            log::warn!("checkpoint config hash {} differs from current config", self.config_hash);
        }
        Ok(())
    }
}

/// One optimization step in place. On a numeric failure the state is left
/// untouched.
pub fn train_step(
    state: &mut TrainState,
    batch: &Batch,
    handles: &[GeneralistHandle],
    cfg: &ExperimentConfig,
) -> Result<LossBreakdown> {
    let g = total_loss(state, batch, handles, cfg)?;
    let lr = g.breakdown.lr;
    let mut student = state.student.clone();
    let mut momentum = state.student_momentum.clone();
    sgd_step(&mut student, &g.student, &mut momentum, lr, cfg.momentum, cfg.weight_decay);
    if !student.all_finite() {
        return Err(Error::Numeric(format!("non-finite parameters after step {}", state.t)));
    }
    if let (Some(e), Some(m), Some(eg)) = (state.evaluator.as_mut(), state.evaluator_momentum.as_mut(), g.evaluator.as_ref()) {
        sgd_step(e, eg, m, lr, cfg.momentum, cfg.weight_decay);
    }
    state.student = student;
    state.student_momentum = momentum;
    if let Some(t) = state.teacher.as_mut() {
        ema_update_inplace(t, &state.student, cfg.ema_alpha)?;
    }
    state.t += 1;
    Ok(g.breakdown)
}
