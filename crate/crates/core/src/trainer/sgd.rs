use crate::nn::{ParamSet, Scalar};

/// SGD with momentum and L2 weight decay:
/// `g += wd * p; v = mu * v + g; p -= lr * v`.
pub fn sgd_step<S: Scalar>(params: &mut ParamSet<S>, grads: &ParamSet<S>, velocity: &mut ParamSet<S>, lr: f64, momentum: f64, weight_decay: f64) {
    assert!(params.same_structure(grads) && params.same_structure(velocity), "sgd on mismatched parameter sets");
    let (lr, mu, wd) = (S::lit(lr), S::lit(momentum), S::lit(weight_decay));
    for ((p, g), v) in params.tensors.iter_mut().zip(&grads.tensors).zip(velocity.tensors.iter_mut()) {
        for ((x, &gx), vx) in p.data.iter_mut().zip(&g.data).zip(v.data.iter_mut()) {
            let d = gx + wd * *x;
            *vx = mu * *vx + d;
            *x -= lr * *vx;
        }
    }
}
