use super::{RegionMask, UncertaintyMap};
use crate::error::{Error, Result};
use crate::nn::{sigmoid, ParamSet, Tensor};
use crate::rng::Stream;
use crate::specialist::{Perturbation, UNetArch};
use ndarray::{Array3, Zip};

/// Binary entropy of a probability map (natural log), with `0 ln 0 = 0`.
pub fn predictive_entropy(mean: &Array3<f32>) -> UncertaintyMap {
    let h = mean.mapv(|p| {
        let p = p as f64;
        let term = |q: f64| if q > 0.0 { -q * q.ln() } else { 0.0 };
        (term(p) + term(1.0 - p)).max(0.0) as f32
    });
    UncertaintyMap(h)
}

/// Voxelwise mean of several probability maps.
pub fn mean_of(preds: &[Array3<f32>]) -> Result<Array3<f32>> {
    let first = preds.first().ok_or_else(|| Error::Invalid("no predictions to average".into()))?;
    let mut acc = Array3::<f64>::zeros(first.raw_dim());
    for p in preds {
        if p.shape() != first.shape() {
            return Err(Error::Shape("prediction shapes differ".into()));
        }
        Zip::from(&mut acc).and(p).for_each(|a, &v| *a += v as f64);
    }
    let n = preds.len() as f64;
    Ok(acc.mapv(|v| (v / n) as f32))
}

/// Teacher uncertainty from `passes` stochastic forward passes: the entropy
/// of the mean foreground probability. Also returns that mean.
pub fn teacher_uncertainty(
    arch: &UNetArch,
    teacher: &ParamSet<f32>,
    image: &Tensor<f32>,
    passes: usize,
    perturbation: Perturbation,
    stream: &mut Stream,
) -> Result<(UncertaintyMap, Array3<f32>)> {
    if passes < 2 {
        return Err(Error::Invalid(format!("teacher uncertainty needs >= 2 passes, got {passes}")));
    }
    let [_, d, h, w] = image.shape;
    let mut preds = Vec::with_capacity(passes);
    for _ in 0..passes {
        let out = arch.forward(teacher, image, Some((&mut *stream, perturbation)))?;
        let p: Vec<f32> = out.logits.data.iter().map(|&z| sigmoid(z)).collect();
        preds.push(Array3::from_shape_vec((d, h, w), p).expect("logit shape"));
    }
    let mean = mean_of(&preds)?;
    Ok((predictive_entropy(&mean), mean))
}

/// `M = 1[U < u_th]`
pub fn uncertainty_mask(u: &UncertaintyMap, u_th: f64) -> RegionMask {
    RegionMask(u.data().mapv(|v| u8::from((v as f64) < u_th)))
}
