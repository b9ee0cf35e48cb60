use crate::error::{shape_err, Result};
use crate::nn::{sigmoid, Scalar};
use crate::specialist::levelset_to_prob;
use ndarray::{Array3, ArrayView3, Zip};

/// Loss value with its gradient w.r.t. the first (trainable) argument.
#[derive(Debug, Clone)]
pub struct LossGrad<S> {
    pub value: S,
    pub grad: Array3<S>,
}

/// Loss value with gradients w.r.t. both arguments.
#[derive(Debug, Clone)]
pub struct DualLossGrad<S> {
    pub value: S,
    pub grad_a: Array3<S>,
    pub grad_b: Array3<S>,
}

const DICE_SMOOTH: f64 = 1e-5;

fn same<A, B>(what: &str, a: &ArrayView3<A>, b: &ArrayView3<B>) -> Result<()> {
    if a.shape() != b.shape() {
        return shape_err(what, a.shape(), b.shape());
    }
    Ok(())
}

fn softplus<S: Scalar>(z: S) -> S {
    // ln(1 + e^z) without overflow
    z.max(S::zero()) + (-z.abs()).exp().ln_1p()
}

/// `0.5 * soft Dice loss + 0.5 * voxelwise binary cross-entropy`.
///
/// `prob` must equal `sigmoid(logits)`; the gradient is w.r.t. the logits.
pub fn supervised_loss<S: Scalar>(
    prob: &ArrayView3<S>,
    logits: &ArrayView3<S>,
    label: &ArrayView3<u8>,
) -> Result<LossGrad<S>> {
    same("supervised_loss prob/logits", prob, logits)?;
    same("supervised_loss prob/label", prob, label)?;
    let n = S::lit(prob.len() as f64);
    let eps = S::lit(DICE_SMOOTH);
    let two = S::lit(2.0);
    let half = S::lit(0.5);

    let (mut inter, mut psum, mut ysum, mut bce) = (S::zero(), S::zero(), S::zero(), S::zero());
    Zip::from(prob).and(logits).and(label).for_each(|&p, &z, &y| {
        let y = if y != 0 { S::one() } else { S::zero() };
        inter += p * y;
        psum += p;
        ysum += y;
        bce += softplus(z) - z * y;
    });
    let denom = psum + ysum + eps;
    let numer = two * inter + eps;
    let dice_loss = S::one() - numer / denom;
    let bce = bce / n;

    let mut grad = Array3::zeros(prob.raw_dim());
    Zip::from(&mut grad).and(prob).and(logits).and(label).for_each(|g, &p, &z, &y| {
        let y = if y != 0 { S::one() } else { S::zero() };
        let ddice_dp = -(two * y * denom - numer) / (denom * denom);
        let dbce_dz = (sigmoid(z) - y) / n;
        *g = half * ddice_dp * p * (S::one() - p) + half * dbce_dz;
    });
    Ok(LossGrad { value: half * dice_loss + half * bce, grad })
}

/// Mean squared difference; gradient w.r.t. `f1` (`f2` is the target).
pub fn consistency_loss<S: Scalar>(f1: &ArrayView3<S>, f2: &ArrayView3<S>) -> Result<LossGrad<S>> {
    same("consistency_loss", f1, f2)?;
    let n = S::lit(f1.len() as f64);
    let mut sum = S::zero();
    let mut grad = Array3::zeros(f1.raw_dim());
    Zip::from(&mut grad).and(f1).and(f2).for_each(|g, &a, &b| {
        let d = a - b;
        sum += d * d;
        *g = S::lit(2.0) * d / n;
    });
    Ok(LossGrad { value: sum / n, grad })
}

/// `sum(M * (f1 - f2)^2) / sum(M)`, or 0 when the mask is empty.
pub fn region_selective_loss<S: Scalar>(
    f1: &ArrayView3<S>,
    f2: &ArrayView3<S>,
    mask: &ArrayView3<u8>,
) -> Result<LossGrad<S>> {
    same("region_selective_loss f1/f2", f1, f2)?;
    same("region_selective_loss f1/mask", f1, mask)?;
    let count = mask.iter().filter(|&&m| m != 0).count();
    let mut grad = Array3::zeros(f1.raw_dim());
    if count == 0 {
        return Ok(LossGrad { value: S::zero(), grad });
    }
    let m_sum = S::lit(count as f64);
    let mut sum = S::zero();
    Zip::from(&mut grad).and(f1).and(f2).and(mask).for_each(|g, &a, &b, &m| {
        if m != 0 {
            let d = a - b;
            sum += d * d;
            *g = S::lit(2.0) * d / m_sum;
        }
    });
    Ok(LossGrad { value: sum / m_sum, grad })
}

/// Dual-task consistency: MSE between the segmentation probability and the
/// level-set prediction mapped through `sigmoid(-k z)`. `grad_a` is w.r.t.
/// `seg_prob`, `grad_b` w.r.t. `levelset_pred`.
pub fn dtc_loss<S: Scalar>(seg_prob: &ArrayView3<S>, levelset_pred: &ArrayView3<S>, k: f64) -> Result<DualLossGrad<S>> {
    same("dtc_loss", seg_prob, levelset_pred)?;
    let q = levelset_to_prob(levelset_pred, k);
    let base = consistency_loss(seg_prob, &q.view())?;
    let kk = S::lit(k);
    let mut grad_b = Array3::zeros(q.raw_dim());
    // d/dz (p - q)^2 / n = -grad_a * dq/dz, dq/dz = -k q (1 - q)
    Zip::from(&mut grad_b).and(&base.grad).and(&q).for_each(|g, &ga, &qv| {
        *g = ga * kk * qv * (S::one() - qv);
    });
    Ok(DualLossGrad { value: base.value, grad_a: base.grad, grad_b })
}

/// Evaluation-network objective from its pre-sigmoid scores on a labeled
/// (target 1) and an unlabeled (target 0) sample. Returns
/// `(loss, d/d logit_labeled, d/d logit_unlabeled)`.
pub fn dan_evaluator_loss<S: Scalar>(logit_labeled: S, logit_unlabeled: S) -> (S, S, S) {
    let value = softplus(-logit_labeled) + softplus(logit_unlabeled);
    (value, sigmoid(logit_labeled) - S::one(), sigmoid(logit_unlabeled))
}

/// Adversarial term for the segmentation network: `-BCE(score, 0)`.
/// Returns `(loss, d/d logit)`.
pub fn dan_unsupervised_loss<S: Scalar>(logit_unlabeled: S) -> (S, S) {
    (-softplus(logit_unlabeled), -sigmoid(logit_unlabeled))
}
