//! Total loss assembly: supervised term, strategy-specific unsupervised
//! term, and the generalist terms summed over registered generalists.

use super::{LossBreakdown, TrainState};
use crate::config::{ExperimentConfig, Strategy};
use crate::data::{Batch, Patch};
use crate::error::{Error, Result};
use crate::generalist::GeneralistHandle;
use crate::nn::{sigmoid, ParamSet, Tensor};
use crate::prompting::{build_prompt_variants, sam_regularization_with_prompts, PromptPlan, SamSettings};
use crate::rng::seeded_stream;
use crate::specialist::unet::UNetCache;
use crate::specialist::{levelset_transform, Perturbation};
use crate::ssl::{
    consistency_loss, dan_evaluator_loss, dan_unsupervised_loss, dtc_loss, lambda_schedule, poly_lr,
    region_selective_loss, supervised_loss, teacher_uncertainty, uncertainty_mask, uncertainty_threshold,
};
use ndarray::{Array3, Zip};

/// Loss breakdown plus the gradients of one step.
pub struct StepGradients {
    pub breakdown: LossBreakdown,
    pub student: ParamSet<f32>,
    pub evaluator: Option<ParamSet<f32>>,
}

struct Fwd {
    cache: UNetCache<f32>,
    logits: Array3<f32>,
    prob: Array3<f32>,
    levelset: Option<Array3<f32>>,
    /// Accumulated dL/dprob and dL/dlogits.
    dprob: Array3<f32>,
    dlogits: Array3<f32>,
    dlevelset: Option<Array3<f32>>,
}

fn tensor(a: &Array3<f32>) -> Tensor<f32> {
    let s = a.shape();
    Tensor::from_vec([1, s[0], s[1], s[2]], a.iter().copied().collect())
}

fn array(t: &Tensor<f32>) -> Array3<f32> {
    let [_, d, h, w] = t.shape;
    Array3::from_shape_vec((d, h, w), t.data.clone()).expect("single channel")
}

fn add_scaled(acc: &mut Array3<f32>, g: &Array3<f32>, w: f64) {
    let w = w as f32;
    Zip::from(acc).and(g).for_each(|a, &b| *a += w * b);
}

pub fn perturbation(cfg: &ExperimentConfig) -> Perturbation {
    Perturbation { input_noise_std: cfg.input_noise_std, dropout: cfg.dropout }
}

/// Evaluates every loss term on `batch` at `state.t` and backpropagates.
pub fn total_loss(
    state: &TrainState,
    batch: &Batch,
    handles: &[GeneralistHandle],
    cfg: &ExperimentConfig,
) -> Result<StepGradients> {
    state.check_strategy(cfg.strategy)?;
    let t = state.t;
    let arch = &state.arch;
    let lambda = lambda_schedule(t, cfg.t_max, cfg.lambda_max)?;
    let beta = lambda_schedule(t, cfg.t_max, cfg.beta_max)?;
    let lr = poly_lr(cfg.lr0, t, cfg.t_max);
    let pert = perturbation(cfg);

    let forward = |p: &Patch| -> Result<Fwd> {
        let out = arch.forward(&state.student, &tensor(&p.image), None)?;
        let logits = array(&out.logits);
        let prob = logits.mapv(sigmoid);
        let zeros = Array3::zeros(logits.raw_dim());
        Ok(Fwd {
            levelset: out.levelset.as_ref().map(array),
            dlevelset: out.levelset.as_ref().map(|_| zeros.clone()),
            cache: out.cache,
            dprob: zeros.clone(),
            dlogits: zeros,
            logits,
            prob,
        })
    };
    let mut lab = batch.labeled.iter().map(forward).collect::<Result<Vec<_>>>()?;
    let mut unl = batch.unlabeled.iter().map(forward).collect::<Result<Vec<_>>>()?;
    let (nl, nu) = (lab.len() as f64, unl.len() as f64);

    // supervised
    let mut sup = 0.0;
    for (f, p) in lab.iter_mut().zip(&batch.labeled) {
        let label = p.label.as_ref().ok_or_else(|| Error::Data("labeled patch without label".into()))?;
        let s = supervised_loss(&f.prob.view(), &f.logits.view(), &label.view())?;
        sup += s.value as f64 / nl;
        add_scaled(&mut f.dlogits, &s.grad, 1.0 / nl);
        if let (Some(ls), Some(dls)) = (&f.levelset, f.dlevelset.as_mut()) {
            let target = levelset_transform(&label.view());
            let c = consistency_loss(&ls.view(), &target.view())?;
            sup += cfg.levelset_weight * c.value as f64 / nl;
            add_scaled(dls, &c.grad, cfg.levelset_weight / nl);
        }
    }

    // unsupervised
    let mut unsup = 0.0;
    let mut evaluator_grads = None;
    let mut evaluator_loss = None;
    match cfg.strategy {
        Strategy::Mt | Strategy::Uamt => {
            let teacher = state.teacher.as_ref().expect("checked by check_strategy");
            let mut rng = seeded_stream(cfg.seed, &format!("teacher/{t}"));
            let u_th = uncertainty_threshold(t, cfg.t_max, cfg.u_th_max)?;
            for (f, p) in unl.iter_mut().zip(&batch.unlabeled) {
                let x = tensor(&p.image);
                let lg = if cfg.strategy == Strategy::Mt {
                    let out = arch.forward(teacher, &x, Some((&mut rng, pert)))?;
                    let target = array(&out.logits).mapv(sigmoid);
                    consistency_loss(&f.prob.view(), &target.view())?
                } else {
                    let (u, mean) = teacher_uncertainty(arch, teacher, &x, cfg.t_passes, pert, &mut rng)?;
                    let m = uncertainty_mask(&u, u_th);
                    region_selective_loss(&f.prob.view(), &mean.view(), &m.data().view())?
                };
                unsup += lg.value as f64 / nu;
                add_scaled(&mut f.dprob, &lg.grad, lambda / nu);
            }
        }
        Strategy::Dtc => {
            let n = nl + nu;
            for f in lab.iter_mut().chain(unl.iter_mut()) {
                let ls = f.levelset.as_ref().expect("dual head");
                let d = dtc_loss(&f.prob.view(), &ls.view(), cfg.k)?;
                unsup += d.value as f64 / n;
                add_scaled(&mut f.dprob, &d.grad_a, lambda / n);
                add_scaled(f.dlevelset.as_mut().unwrap(), &d.grad_b, lambda / n);
            }
        }
        Strategy::Dan => {
            let ev_arch = state.evaluator_arch.as_ref().expect("checked by check_strategy");
            let ev = state.evaluator.as_ref().expect("checked by check_strategy");
            let mut egrads = ev.zeros_like();
            let mut eloss = 0.0;
            let pairs = lab.len().min(unl.len());
            for i in 0..unl.len() {
                let x_u = tensor(&batch.unlabeled[i].image);
                let (logit_u, cache_u) = ev_arch.forward(ev, &tensor(&unl[i].prob), &x_u)?;
                let (v, dlogit) = dan_unsupervised_loss(logit_u);
                unsup += v as f64 / nu;
                let gin = ev_arch.input_gradient(ev, &cache_u, dlogit);
                add_scaled(&mut unl[i].dprob, &array(&gin), lambda / nu);
                if i < pairs {
                    let x_l = tensor(&batch.labeled[i].image);
                    let (logit_l, cache_l) = ev_arch.forward(ev, &tensor(&lab[i].prob), &x_l)?;
                    let (ev_v, dl, du) = dan_evaluator_loss(logit_l, logit_u);
                    let w = 1.0 / pairs as f32;
                    eloss += ev_v as f64 / pairs as f64;
                    ev_arch.backward(ev, &cache_l, dl * w, &mut egrads);
                    ev_arch.backward(ev, &cache_u, du * w, &mut egrads);
                }
            }
            evaluator_grads = Some(egrads);
            evaluator_loss = Some(eloss);
        }
    }

    // generalist terms
    let mut sam = vec![0.0; if cfg.sam_enabled() { handles.len() } else { 0 }];
    let mut sam_skipped = 0;
    if cfg.sam_enabled() {
        if handles.is_empty() {
            return Err(Error::config("generalists", "generalist regularization enabled without generalists"));
        }
        let plan = PromptPlan::from_config(cfg);
        let settings = SamSettings {
            tau: lambda_schedule(t, cfg.t_max, cfg.tau_max)?,
            confidence_mode: cfg.confidence_mode,
            discrepancy: cfg.discrepancy,
        };
        for (i, (f, p)) in unl.iter_mut().zip(&batch.unlabeled).enumerate() {
            let mut rng = seeded_stream(cfg.seed, &format!("prompt/{t}/{i}"));
            let prompts = build_prompt_variants(&f.prob.view(), &plan, &mut rng);
            if prompts.is_none() {
                sam_skipped += 1;
            }
            let source = p.source();
            for (g, h) in handles.iter().enumerate() {
                let r = sam_regularization_with_prompts(&f.prob.view(), h, &p.image, &source, prompts.as_deref(), settings)?;
                sam[g] += r.loss as f64 / nu;
                add_scaled(&mut f.dprob, &r.grad, beta / nu);
            }
        }
    }

    let sam_total: f64 = sam.iter().fold(0.0, |a, b| a + b);
    let total = sup + lambda * unsup + beta * sam_total;
    let breakdown = LossBreakdown { t, lr, lambda, beta, sup, unsup, sam, sam_skipped, total, evaluator_loss };
    if !total.is_finite() || !evaluator_loss.unwrap_or(0.0).is_finite() {
        return Err(Error::Numeric(format!("non-finite loss at t={t}: {breakdown:?}")));
    }

    let mut grads = state.student.zeros_like();
    for f in lab.iter().chain(unl.iter()) {
        let mut dl = f.dlogits.clone();
        Zip::from(&mut dl).and(&f.dprob).and(&f.prob).for_each(|d, &g, &p| *d += g * p * (1.0 - p));
        let dls = f.dlevelset.as_ref().map(tensor);
        arch.backward(&state.student, &f.cache, &tensor(&dl), dls.as_ref(), &mut grads);
    }
    Ok(StepGradients { breakdown, student: grads, evaluator: evaluator_grads })
}
