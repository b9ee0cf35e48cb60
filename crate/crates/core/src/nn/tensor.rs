use super::scalar::Scalar;

/// Dense single-sample activation tensor laid out as `[channels, d, h, w]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S> {
    pub shape: [usize; 4],
    pub data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: [usize; 4]) -> Self {
        Tensor {
            shape,
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: [usize; 4], data: Vec<S>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor size mismatch");
        Tensor { shape, data }
    }

    pub fn channels(&self) -> usize {
        self.shape[0]
    }

    pub fn spatial(&self) -> [usize; 3] {
        [self.shape[1], self.shape[2], self.shape[3]]
    }

    pub fn voxels(&self) -> usize {
        self.shape[1] * self.shape[2] * self.shape[3]
    }

    /// Stacks two tensors along the channel axis.
    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!(a.spatial(), b.spatial(), "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            shape: [a.shape[0] + b.shape[0], a.shape[1], a.shape[2], a.shape[3]],
            data,
        }
    }

    /// Inverse of [`Tensor::concat`]: splits off the first `ca` channels.
    pub fn split(self, ca: usize) -> (Self, Self) {
        let n = self.voxels();
        let [c, d, h, w] = self.shape;
        assert!(ca <= c);
        let mut data = self.data;
        let tail = data.split_off(ca * n);
        (
            Tensor { shape: [ca, d, h, w], data },
            Tensor { shape: [c - ca, d, h, w], data: tail },
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }
}
