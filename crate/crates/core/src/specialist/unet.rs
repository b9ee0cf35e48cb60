//! Compact 3D encoder-decoder (U-Net style) segmentation backbone with an
//! optional level-set regression head.

use crate::error::{Error, Result};
use crate::nn::layers::{
    maxpool2_backward, maxpool2_forward, relu_backward, relu_inplace, ConvCache, UpConvCache,
};
use crate::nn::{Conv3d, ParamSet, Scalar, Tensor, UpConv3d};
use crate::rng::Stream;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

/// Architecture descriptor. Stored in checkpoints and compared on load.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetArch {
    /// Number of resolution levels (1 = no downsampling).
    pub depth: usize,
    pub base_width: usize,
    pub patch: [usize; 3],
    /// Adds the tanh level-set head used by dual-task consistency.
    pub dual_head: bool,
}

#[derive(Debug, Clone, Copy)]
struct ConvSlot {
    conv: Conv3d,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone, Copy)]
struct UpSlot {
    up: UpConv3d,
    w: usize,
    b: usize,
}

#[derive(Debug, Clone)]
struct Layout {
    enc: Vec<[ConvSlot; 2]>,
    /// Indexed by level; `dec[l]` upsamples from level `l + 1` into level `l`.
    dec: Vec<(UpSlot, [ConvSlot; 2])>,
    head: ConvSlot,
    levelset_head: Option<ConvSlot>,
}

/// Training-time perturbation applied inside a stochastic forward pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Perturbation {
    pub input_noise_std: f64,
    pub dropout: f64,
}

impl Default for Perturbation {
    fn default() -> Self {
        Perturbation { input_noise_std: 0.1, dropout: 0.1 }
    }
}

struct EncCache<S> {
    pool: Option<(Vec<u32>, [usize; 4])>,
    c0: ConvCache<S>,
    a0: Tensor<S>,
    c1: ConvCache<S>,
    a1: Tensor<S>,
}

struct DecCache<S> {
    up: UpConvCache<S>,
    c0: ConvCache<S>,
    a0: Tensor<S>,
    c1: ConvCache<S>,
    a1: Tensor<S>,
}

pub struct UNetCache<S> {
    enc: Vec<EncCache<S>>,
    dec: Vec<Option<DecCache<S>>>,
    dropout_mask: Option<Vec<S>>,
    head: ConvCache<S>,
    levelset: Option<(ConvCache<S>, Tensor<S>)>,
}

pub struct UNetOutput<S> {
    /// Single-channel foreground logits.
    pub logits: Tensor<S>,
    /// tanh level-set prediction, dual-head networks only.
    pub levelset: Option<Tensor<S>>,
    pub cache: UNetCache<S>,
}

impl UNetArch {
    pub fn new(depth: usize, base_width: usize, patch: [usize; 3], dual_head: bool) -> Result<Self> {
        let arch = UNetArch { depth, base_width, patch, dual_head };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_width == 0 {
            return Err(Error::Invalid("depth and base_width must be >= 1".into()));
        }
        let div = 1usize << (self.depth - 1);
        if self.patch.iter().any(|&p| p == 0 || p % div != 0) {
            return Err(Error::Invalid(format!(
                "patch {:?} must be divisible by {div} for depth {}",
                self.patch, self.depth
            )));
        }
        Ok(())
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width << level
    }

    fn layout(&self) -> Layout {
        // parameters come in (weight, bias) pairs, in `init_params` order
        fn take(idx: &mut usize) -> (usize, usize) {
            *idx += 2;
            (*idx - 2, *idx - 1)
        }
        let slot = |idx: &mut usize, conv: Conv3d| {
            let (w, b) = take(idx);
            ConvSlot { conv, w, b }
        };
        let mut idx = 0usize;
        let mut enc = Vec::new();
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.width(l - 1) };
            let c0 = slot(&mut idx, Conv3d::same(cin, self.width(l)));
            let c1 = slot(&mut idx, Conv3d::same(self.width(l), self.width(l)));
            enc.push([c0, c1]);
        }
        let mut dec_rev = Vec::new();
        for l in (0..self.depth.saturating_sub(1)).rev() {
            let w = self.width(l);
            let up = UpConv3d { cin: self.width(l + 1), cout: w };
            let (uw, ub) = take(&mut idx);
            let c0 = slot(&mut idx, Conv3d::same(2 * w, w));
            let c1 = slot(&mut idx, Conv3d::same(w, w));
            dec_rev.push((l, (UpSlot { up, w: uw, b: ub }, [c0, c1])));
        }
        dec_rev.sort_by_key(|(l, _)| *l);
        let dec = dec_rev.into_iter().map(|(_, d)| d).collect();
        let head = slot(&mut idx, Conv3d::pointwise(self.base_width, 1));
        let levelset_head = self.dual_head.then(|| slot(&mut idx, Conv3d::pointwise(self.base_width, 1)));
        Layout { enc, dec, head, levelset_head }
    }

    /// He-normal weights, zero biases.
    pub fn init_params<S: Scalar, R: Rng + ?Sized>(&self, rng: &mut R) -> ParamSet<S> {
        let mut p = ParamSet::default();
        let conv = |p: &mut ParamSet<S>, rng: &mut R, name: String, c: Conv3d| {
            let k = c.kernel;
            p.push_he(&format!("{name}.weight"), vec![c.cout, c.cin, k, k, k], c.fan_in(), rng);
            p.push_zeros(&format!("{name}.bias"), vec![c.cout]);
        };
        for l in 0..self.depth {
            let cin = if l == 0 { 1 } else { self.width(l - 1) };
            conv(&mut p, rng, format!("enc{l}.conv0"), Conv3d::same(cin, self.width(l)));
            conv(&mut p, rng, format!("enc{l}.conv1"), Conv3d::same(self.width(l), self.width(l)));
        }
        for l in (0..self.depth.saturating_sub(1)).rev() {
            let w = self.width(l);
            let cin = self.width(l + 1);
            p.push_he(&format!("dec{l}.up.weight"), vec![cin, w, 2, 2, 2], cin, rng);
            p.push_zeros(&format!("dec{l}.up.bias"), vec![w]);
            conv(&mut p, rng, format!("dec{l}.conv0"), Conv3d::same(2 * w, w));
            conv(&mut p, rng, format!("dec{l}.conv1"), Conv3d::same(w, w));
        }
        conv(&mut p, rng, "head".into(), Conv3d::pointwise(self.base_width, 1));
        if self.dual_head {
            conv(&mut p, rng, "levelset_head".into(), Conv3d::pointwise(self.base_width, 1));
        }
        debug_assert_eq!(p.len(), self.param_count());
        p
    }

    fn param_count(&self) -> usize {
        4 * self.depth + 6 * (self.depth - 1) + 2 + if self.dual_head { 2 } else { 0 }
    }

    /// Checks that `params` has the tensor names and shapes this descriptor produces.
    pub fn check_params<S: Scalar>(&self, params: &ParamSet<S>) -> Result<()> {
        let reference: ParamSet<S> = self.init_params(&mut crate::rng::seeded_stream(0, "shape"));
        if !reference.same_structure(params) {
            return Err(Error::Shape(format!("parameters do not match architecture {self:?}")));
        }
        Ok(())
    }

    /// Runs the network on one single-channel patch.
    ///
    /// With `stochastic` set, additive Gaussian input noise and dropout on the
    /// last decoder features are drawn from the given stream.
    pub fn forward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        input: &Tensor<S>,
        stochastic: Option<(&mut Stream, Perturbation)>,
    ) -> Result<UNetOutput<S>> {
        if input.shape != [1, self.patch[0], self.patch[1], self.patch[2]] {
            return Err(Error::Shape(format!(
                "input {:?} does not match patch {:?}",
                input.shape, self.patch
            )));
        }
        let lay = self.layout();
        let mut rng_pert = stochastic;
        let mut x = input.clone();
        if let Some((rng, pert)) = rng_pert.as_mut() {
            if pert.input_noise_std > 0.0 {
                let std = S::lit(pert.input_noise_std);
                for v in x.data.iter_mut() {
                    let n: f64 = StandardNormal.sample(&mut **rng);
                    *v += std * S::lit(n);
                }
            }
        }

        let mut enc_caches = Vec::with_capacity(self.depth);
        for (l, [s0, s1]) in lay.enc.iter().enumerate() {
            let pool = if l > 0 {
                let prev: &Tensor<S> = &enc_caches.last().map(|c: &EncCache<S>| &c.a1).unwrap();
                let (pooled, arg) = maxpool2_forward(prev);
                let shape = prev.shape;
                x = pooled;
                Some((arg, shape))
            } else {
                None
            };
            let (mut a0, c0) = s0.conv.forward(params.data(s0.w), params.data(s0.b), &x);
            relu_inplace(&mut a0);
            let (mut a1, c1) = s1.conv.forward(params.data(s1.w), params.data(s1.b), &a0);
            relu_inplace(&mut a1);
            enc_caches.push(EncCache { pool, c0, a0, c1, a1 });
        }

        let mut feat = enc_caches.last().unwrap().a1.clone();
        let mut dec_caches: Vec<Option<DecCache<S>>> = (0..lay.dec.len()).map(|_| None).collect();
        for l in (0..lay.dec.len()).rev() {
            let (up, [s0, s1]) = &lay.dec[l];
            let (u, upc) = up.up.forward(params.data(up.w), params.data(up.b), &feat);
            let cat = Tensor::concat(&enc_caches[l].a1, &u);
            let (mut a0, c0) = s0.conv.forward(params.data(s0.w), params.data(s0.b), &cat);
            relu_inplace(&mut a0);
            let (mut a1, c1) = s1.conv.forward(params.data(s1.w), params.data(s1.b), &a0);
            relu_inplace(&mut a1);
            feat = a1.clone();
            dec_caches[l] = Some(DecCache { up: upc, c0, a0, c1, a1 });
        }

        let mut dropout_mask = None;
        if let Some((rng, pert)) = rng_pert.as_mut() {
            if pert.dropout > 0.0 {
                let keep = 1.0 - pert.dropout;
                let scale = S::lit(1.0 / keep);
                let mask: Vec<S> = (0..feat.data.len())
                    .map(|_| if rng.random::<f64>() < keep { scale } else { S::zero() })
                    .collect();
                for (v, m) in feat.data.iter_mut().zip(&mask) {
                    *v *= *m;
                }
                dropout_mask = Some(mask);
            }
        }

        let (logits, head) = lay.head.conv.forward(params.data(lay.head.w), params.data(lay.head.b), &feat);
        let mut levelset_out = None;
        let levelset = lay.levelset_head.map(|s| {
            let (mut z, c) = s.conv.forward(params.data(s.w), params.data(s.b), &feat);
            for v in z.data.iter_mut() {
                *v = v.tanh();
            }
            levelset_out = Some(z.clone());
            (c, z)
        });

        Ok(UNetOutput {
            logits,
            levelset: levelset_out,
            cache: UNetCache { enc: enc_caches, dec: dec_caches, dropout_mask, head, levelset },
        })
    }

    /// Accumulates parameter gradients into `grads` given gradients of the
    /// loss w.r.t. the logits and (for dual-head nets) the tanh level-set output.
    pub fn backward<S: Scalar>(
        &self,
        params: &ParamSet<S>,
        cache: &UNetCache<S>,
        dlogits: &Tensor<S>,
        dlevelset: Option<&Tensor<S>>,
        grads: &mut ParamSet<S>,
    ) {
        let lay = self.layout();
        let hd = lay.head;
        let (gw, gb) = grads.pair_mut(hd.w, hd.b);
        let mut dfeat = hd.conv.backward(params.data(hd.w), &cache.head, dlogits, gw, gb);
        if let (Some(s), Some((c, z)), Some(dz)) = (lay.levelset_head, cache.levelset.as_ref(), dlevelset) {
            let mut dpre = dz.clone();
            for (g, t) in dpre.data.iter_mut().zip(&z.data) {
                *g *= S::one() - *t * *t;
            }
            let (gw, gb) = grads.pair_mut(s.w, s.b);
            let d = s.conv.backward(params.data(s.w), c, &dpre, gw, gb);
            dfeat.add_assign(&d);
        }
        if let Some(mask) = &cache.dropout_mask {
            for (g, m) in dfeat.data.iter_mut().zip(mask) {
                *g *= *m;
            }
        }

        let mut dskip: Vec<Option<Tensor<S>>> = (0..self.depth).map(|_| None).collect();
        for (l, (up, [s0, s1])) in lay.dec.iter().enumerate() {
            let dc = cache.dec[l].as_ref().expect("decoder cache");
            let d = relu_backward(&dc.a1, dfeat);
            let (gw, gb) = grads.pair_mut(s1.w, s1.b);
            let d = s1.conv.backward(params.data(s1.w), &dc.c1, &d, gw, gb);
            let d = relu_backward(&dc.a0, d);
            let (gw, gb) = grads.pair_mut(s0.w, s0.b);
            let dcat = s0.conv.backward(params.data(s0.w), &dc.c0, &d, gw, gb);
            let (ds, du) = dcat.split(self.width(l));
            dskip[l] = Some(ds);
            let (gw, gb) = grads.pair_mut(up.w, up.b);
            dfeat = up.up.backward(params.data(up.w), &dc.up, &du, gw, gb);
        }

        // `dfeat` now holds the gradient w.r.t. the deepest encoder output.
        let mut carry = Some(dfeat);
        for l in (0..self.depth).rev() {
            let ec = &cache.enc[l];
            let [s0, s1] = lay.enc[l];
            let mut g = match (carry.take(), dskip[l].take()) {
                (Some(mut a), Some(b)) => {
                    a.add_assign(&b);
                    a
                }
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => Tensor::zeros(ec.a1.shape),
            };
            g = relu_backward(&ec.a1, g);
            let (gw, gb) = grads.pair_mut(s1.w, s1.b);
            g = s1.conv.backward(params.data(s1.w), &ec.c1, &g, gw, gb);
            g = relu_backward(&ec.a0, g);
            let (gw, gb) = grads.pair_mut(s0.w, s0.b);
            let dx = s0.conv.backward(params.data(s0.w), &ec.c0, &g, gw, gb);
            if let Some((arg, shape)) = &ec.pool {
                carry = Some(maxpool2_backward(&dx, arg, *shape));
            }
        }
    }
}
