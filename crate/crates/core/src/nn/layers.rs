//! Forward/backward kernels for the handful of layers the networks use.
//!
//! Every `forward` returns the output together with whatever the matching
//! `backward` needs. Parameter gradients are accumulated into caller-owned
//! buffers so several passes can share one gradient set.

use super::scalar::{gemm, Scalar};
use super::tensor::Tensor;

/// 3D convolution with a cubic kernel, symmetric zero padding and stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv3d {
    pub cin: usize,
    pub cout: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

pub struct ConvCache<S> {
    col: Vec<S>,
    in_shape: [usize; 4],
    out_spatial: [usize; 3],
}

impl Conv3d {
    pub fn same(cin: usize, cout: usize) -> Self {
        Conv3d { cin, cout, kernel: 3, stride: 1, pad: 1 }
    }

    pub fn pointwise(cin: usize, cout: usize) -> Self {
        Conv3d { cin, cout, kernel: 1, stride: 1, pad: 0 }
    }

    pub fn strided(cin: usize, cout: usize) -> Self {
        Conv3d { cin, cout, kernel: 3, stride: 2, pad: 1 }
    }

    pub fn weight_len(&self) -> usize {
        self.cout * self.cin * self.kernel.pow(3)
    }

    pub fn fan_in(&self) -> usize {
        self.cin * self.kernel.pow(3)
    }

    pub fn out_spatial(&self, input: [usize; 3]) -> [usize; 3] {
        input.map(|i| (i + 2 * self.pad - self.kernel) / self.stride + 1)
    }

    /// Output positions `o` along one axis whose input index `o * stride + tap - pad`
    /// lies inside `[0, len)`.
    fn valid_range(&self, tap: usize, len: usize, out: usize) -> std::ops::Range<usize> {
        let (s, p) = (self.stride, self.pad);
        let lo = if tap >= p { 0 } else { (p - tap).div_ceil(s) };
        // largest o with o*s + tap - p <= len - 1
        let hi = if len + p > tap { ((len + p - tap - 1) / s + 1).min(out) } else { 0 };
        lo..hi.max(lo)
    }

    fn im2col<S: Scalar>(&self, x: &Tensor<S>, out: [usize; 3]) -> Vec<S> {
        let [_, d, h, w] = x.shape;
        let k = self.kernel;
        let n_out = out[0] * out[1] * out[2];
        let mut col = vec![S::zero(); self.fan_in() * n_out];
        let (s, p) = (self.stride, self.pad);
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &x.data[ci * d * h * w..(ci + 1) * d * h * w];
            for kd in 0..k {
                let rd = self.valid_range(kd, d, out[0]);
                for kh in 0..k {
                    let rh = self.valid_range(kh, h, out[1]);
                    for kw in 0..k {
                        let rw = self.valid_range(kw, w, out[2]);
                        let dst = &mut col[row * n_out..(row + 1) * n_out];
                        row += 1;
                        if rw.is_empty() {
                            continue;
                        }
                        let iw0 = rw.start * s + kw - p;
                        for od in rd.clone() {
                            let id = od * s + kd - p;
                            for oh in rh.clone() {
                                let ih = oh * s + kh - p;
                                let src = &plane[(id * h + ih) * w..][..w];
                                let drow = &mut dst[(od * out[1] + oh) * out[2]..][..out[2]];
                                if s == 1 {
                                    drow[rw.clone()].copy_from_slice(&src[iw0..iw0 + rw.len()]);
                                } else {
                                    for (j, ow) in rw.clone().enumerate() {
                                        drow[ow] = src[iw0 + j * s];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        col
    }

    fn col2im<S: Scalar>(&self, col: &[S], in_shape: [usize; 4], out: [usize; 3]) -> Tensor<S> {
        let [_, d, h, w] = in_shape;
        let k = self.kernel;
        let n_out = out[0] * out[1] * out[2];
        let mut x = Tensor::zeros(in_shape);
        let (s, p) = (self.stride, self.pad);
        let mut row = 0;
        for ci in 0..self.cin {
            let plane = &mut x.data[ci * d * h * w..(ci + 1) * d * h * w];
            for kd in 0..k {
                let rd = self.valid_range(kd, d, out[0]);
                for kh in 0..k {
                    let rh = self.valid_range(kh, h, out[1]);
                    for kw in 0..k {
                        let rw = self.valid_range(kw, w, out[2]);
                        let src = &col[row * n_out..(row + 1) * n_out];
                        row += 1;
                        if rw.is_empty() {
                            continue;
                        }
                        let iw0 = rw.start * s + kw - p;
                        for od in rd.clone() {
                            let id = od * s + kd - p;
                            for oh in rh.clone() {
                                let ih = oh * s + kh - p;
                                let dst = &mut plane[(id * h + ih) * w..][..w];
                                let srow = &src[(od * out[1] + oh) * out[2]..][..out[2]];
                                if s == 1 {
                                    for (a, b) in dst[iw0..iw0 + rw.len()].iter_mut().zip(&srow[rw.clone()]) {
                                        *a += *b;
                                    }
                                } else {
                                    for (j, ow) in rw.clone().enumerate() {
                                        dst[iw0 + j * s] += srow[ow];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
        x
    }

    pub fn forward<S: Scalar>(&self, weight: &[S], bias: &[S], x: &Tensor<S>) -> (Tensor<S>, ConvCache<S>) {
        assert_eq!(x.channels(), self.cin, "conv input channels");
        let out = self.out_spatial(x.spatial());
        let n_out = out[0] * out[1] * out[2];
        let col = if self.kernel == 1 && self.stride == 1 && self.pad == 0 {
            x.data.clone()
        } else {
            self.im2col(x, out)
        };
        let mut y = vec![S::zero(); self.cout * n_out];
        for (co, chunk) in y.chunks_mut(n_out).enumerate() {
            chunk.fill(bias[co]);
        }
        gemm(self.cout, self.fan_in(), n_out, weight, false, &col, false, S::one(), &mut y);
        (
            Tensor::from_vec([self.cout, out[0], out[1], out[2]], y),
            ConvCache { col, in_shape: x.shape, out_spatial: out },
        )
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward<S: Scalar>(
        &self,
        weight: &[S],
        cache: &ConvCache<S>,
        dy: &Tensor<S>,
        dweight: &mut [S],
        dbias: &mut [S],
    ) -> Tensor<S> {
        let out = cache.out_spatial;
        let n_out = out[0] * out[1] * out[2];
        for (co, chunk) in dy.data.chunks(n_out).enumerate() {
            dbias[co] += chunk.iter().copied().sum::<S>();
        }
        gemm(self.cout, n_out, self.fan_in(), &dy.data, false, &cache.col, true, S::one(), dweight);
        let mut dcol = vec![S::zero(); self.fan_in() * n_out];
        gemm(self.fan_in(), self.cout, n_out, weight, true, &dy.data, false, S::zero(), &mut dcol);
        if self.kernel == 1 && self.stride == 1 && self.pad == 0 {
            Tensor::from_vec(cache.in_shape, dcol)
        } else {
            self.col2im(&dcol, cache.in_shape, out)
        }
    }
}

/// Transposed convolution with kernel 2 and stride 2 (exact 2x upsampling).
///
/// Weight layout is `[cin, cout * 8]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpConv3d {
    pub cin: usize,
    pub cout: usize,
}

pub struct UpConvCache<S> {
    input: Vec<S>,
    in_shape: [usize; 4],
}

impl UpConv3d {
    pub fn weight_len(&self) -> usize {
        self.cin * self.cout * 8
    }

    pub fn forward<S: Scalar>(&self, weight: &[S], bias: &[S], x: &Tensor<S>) -> (Tensor<S>, UpConvCache<S>) {
        assert_eq!(x.channels(), self.cin, "upconv input channels");
        let [_, d, h, w] = x.shape;
        let n = d * h * w;
        let mut cols = vec![S::zero(); self.cout * 8 * n];
        gemm(self.cout * 8, self.cin, n, weight, true, &x.data, false, S::zero(), &mut cols);
        let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
        let mut y = Tensor::zeros([self.cout, od, oh, ow]);
        for co in 0..self.cout {
            for tap in 0..8 {
                let (a, b, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let src = &cols[(co * 8 + tap) * n..][..n];
                for z in 0..d {
                    for yy in 0..h {
                        let base = ((co * od + 2 * z + a) * oh + 2 * yy + b) * ow + c;
                        let srow = &src[(z * h + yy) * w..][..w];
                        for (xx, v) in srow.iter().enumerate() {
                            y.data[base + 2 * xx] = *v + bias[co];
                        }
                    }
                }
            }
        }
        (y, UpConvCache { input: x.data.clone(), in_shape: x.shape })
    }

    pub fn backward<S: Scalar>(
        &self,
        weight: &[S],
        cache: &UpConvCache<S>,
        dy: &Tensor<S>,
        dweight: &mut [S],
        dbias: &mut [S],
    ) -> Tensor<S> {
        let [_, d, h, w] = cache.in_shape;
        let n = d * h * w;
        let (od, oh, ow) = (2 * d, 2 * h, 2 * w);
        let mut dcols = vec![S::zero(); self.cout * 8 * n];
        for co in 0..self.cout {
            let plane = &dy.data[co * od * oh * ow..][..od * oh * ow];
            dbias[co] += plane.iter().copied().sum::<S>();
            for tap in 0..8 {
                let (a, b, c) = (tap >> 2, (tap >> 1) & 1, tap & 1);
                let dst = &mut dcols[(co * 8 + tap) * n..][..n];
                for z in 0..d {
                    for yy in 0..h {
                        let base = ((2 * z + a) * oh + 2 * yy + b) * ow + c;
                        let drow = &mut dst[(z * h + yy) * w..][..w];
                        for (xx, v) in drow.iter_mut().enumerate() {
                            *v = plane[base + 2 * xx];
                        }
                    }
                }
            }
        }
        gemm(self.cin, n, self.cout * 8, &cache.input, false, &dcols, true, S::one(), dweight);
        let mut dx = vec![S::zero(); self.cin * n];
        gemm(self.cin, self.cout * 8, n, weight, false, &dcols, false, S::zero(), &mut dx);
        Tensor::from_vec(cache.in_shape, dx)
    }
}

/// 2x2x2 max pooling with stride 2. Spatial dims must be even.
pub fn maxpool2_forward<S: Scalar>(x: &Tensor<S>) -> (Tensor<S>, Vec<u32>) {
    let [c, d, h, w] = x.shape;
    assert!(d % 2 == 0 && h % 2 == 0 && w % 2 == 0, "maxpool needs even dims, got {:?}", x.shape);
    let (od, oh, ow) = (d / 2, h / 2, w / 2);
    let mut y = Tensor::zeros([c, od, oh, ow]);
    let mut arg = vec![0u32; c * od * oh * ow];
    let mut o = 0;
    for ci in 0..c {
        for z in 0..od {
            for yy in 0..oh {
                for xx in 0..ow {
                    let mut best = S::neg_infinity();
                    let mut bi = 0usize;
                    for a in 0..2 {
                        for b in 0..2 {
                            for cc in 0..2 {
                                let i = ((ci * d + 2 * z + a) * h + 2 * yy + b) * w + 2 * xx + cc;
                                if x.data[i] > best {
                                    best = x.data[i];
                                    bi = i;
                                }
                            }
                        }
                    }
                    y.data[o] = best;
                    arg[o] = bi as u32;
                    o += 1;
                }
            }
        }
    }
    (y, arg)
}

pub fn maxpool2_backward<S: Scalar>(dy: &Tensor<S>, arg: &[u32], in_shape: [usize; 4]) -> Tensor<S> {
    let mut dx = Tensor::zeros(in_shape);
    for (g, &i) in dy.data.iter().zip(arg) {
        dx.data[i as usize] += *g;
    }
    dx
}

pub fn relu_inplace<S: Scalar>(x: &mut Tensor<S>) {
    for v in x.data.iter_mut() {
        if *v < S::zero() {
            *v = S::zero();
        }
    }
}

/// Gradient of ReLU given its output.
pub fn relu_backward<S: Scalar>(out: &Tensor<S>, mut dy: Tensor<S>) -> Tensor<S> {
    for (g, y) in dy.data.iter_mut().zip(&out.data) {
        if *y <= S::zero() {
            *g = S::zero();
        }
    }
    dy
}

pub fn sigmoid<S: Scalar>(z: S) -> S {
    if z >= S::zero() {
        S::one() / (S::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (S::one() + e)
    }
}
