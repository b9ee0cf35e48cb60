//! Evaluation network for adversarial training: a strided 3D convolutional
//! classifier scoring a (probability map, image) pair.

use crate::error::{Error, Result};
use crate::nn::layers::{relu_backward, relu_inplace, ConvCache};
use crate::nn::{sigmoid, Conv3d, ParamSet, Scalar, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluatorArch {
    pub base_width: usize,
    pub n_layers: usize,
}

impl Default for EvaluatorArch {
    fn default() -> Self {
        EvaluatorArch { base_width: 8, n_layers: 4 }
    }
}

pub struct EvaluatorCache<S> {
    convs: Vec<(ConvCache<S>, Tensor<S>)>,
    pooled: Vec<S>,
    spatial: usize,
}

impl EvaluatorArch {
    fn convs(&self) -> Vec<Conv3d> {
        (0..self.n_layers)
            .map(|i| {
                let cin = if i == 0 { 2 } else { self.base_width << (i - 1) };
                Conv3d::strided(cin, self.base_width << i)
            })
            .collect()
    }

    fn feat_width(&self) -> usize {
        self.base_width << (self.n_layers - 1)
    }

    /// He-normal convolutions and a zero-initialized linear head, so a fresh
    /// evaluator scores every input at exactly 0.5.
    pub fn init_params<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<S> {
        let mut p = ParamSet::default();
        for (i, c) in self.convs().into_iter().enumerate() {
            p.push_he(&format!("conv{i}.weight"), vec![c.cout, c.cin, 3, 3, 3], c.fan_in(), rng);
            p.push_zeros(&format!("conv{i}.bias"), vec![c.cout]);
        }
        p.push_zeros("fc.weight", vec![self.feat_width()]);
        p.push_zeros("fc.bias", vec![1]);
        p
    }

    /// Returns the pre-sigmoid score.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        prob: &Tensor<S>,
        image: &Tensor<S>,
    ) -> Result<(S, EvaluatorCache<S>)> {
        if prob.shape != image.shape || prob.channels() != 1 {
            return Err(Error::Shape(format!(
                "evaluator inputs {:?} and {:?} must be equal single-channel shapes",
                prob.shape, image.shape
            )));
        }
        let mut x = Tensor::concat(prob, image);
        let mut convs = Vec::with_capacity(self.n_layers);
        for (i, c) in self.convs().into_iter().enumerate() {
            let (mut y, cache) = c.forward(params.data(2 * i), params.data(2 * i + 1), &x);
            relu_inplace(&mut y);
            x = y.clone();
            convs.push((cache, y));
        }
        let spatial = x.voxels();
        let inv = S::lit(1.0 / spatial as f64);
        let pooled: Vec<S> = x.data.chunks(spatial).map(|ch| ch.iter().copied().sum::<S>() * inv).collect();
        let fw = params.data(2 * self.n_layers);
        let fb = params.data(2 * self.n_layers + 1)[0];
        let logit = pooled.iter().zip(fw).map(|(a, b)| *a * *b).sum::<S>() + fb;
        Ok((logit, EvaluatorCache { convs, pooled, spatial }))
    }

    pub fn score<S: Scalar>(&self, params: &ParamSet<S>, prob: &Tensor<S>, image: &Tensor<S>) -> Result<S> {
        Ok(sigmoid(self.forward(params, prob, image)?.0))
    }

    /// Backpropagates `dlogit`. Parameter gradients accumulate into `grads`;
    /// returns the gradient w.r.t. the probability-map input channel.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        cache: &EvaluatorCache<S>,
        dlogit: S,
        grads: &mut ParamSet<S>,
    ) -> Tensor<S> {
        let n = self.n_layers;
        let fw = params.data(2 * n).to_vec();
        for (g, p) in grads.data_mut(2 * n).iter_mut().zip(&cache.pooled) {
            *g += dlogit * *p;
        }
        grads.data_mut(2 * n + 1)[0] += dlogit;
        let last_shape = cache.convs.last().unwrap().1.shape;
        let inv = S::lit(1.0 / cache.spatial as f64);
        let mut d = Tensor::zeros(last_shape);
        for (ch, w) in d.data.chunks_mut(cache.spatial).zip(&fw) {
            ch.fill(dlogit * *w * inv);
        }
        let convs = self.convs();
        for i in (0..n).rev() {
            let (cc, out) = &cache.convs[i];
            d = relu_backward(out, d);
            let (gw, gb) = grads.pair_mut(2 * i, 2 * i + 1);
            d = convs[i].backward(params.data(2 * i), cc, &d, gw, gb);
        }
        d.split(1).0
    }

    /// Gradient w.r.t. the probability input only. The evaluator parameters
    /// are treated as constants and receive nothing.
    pub fn input_gradient<S: Scalar>(&self, params: &ParamSet<S>, cache: &EvaluatorCache<S>, dlogit: S) -> Tensor<S> {
        let mut scratch = params.zeros_like();
        self.backward(params, cache, dlogit, &mut scratch)
    }
}
