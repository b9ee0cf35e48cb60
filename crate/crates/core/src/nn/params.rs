use super::scalar::Scalar;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// A named parameter array.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor<S> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

/// Ordered collection of named parameter arrays. Order is fixed by the
/// architecture that created the set and is relied upon for indexing.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamSet<S> {
    pub tensors: Vec<NamedTensor<S>>,
}

impl<S: Scalar> ParamSet<S> {
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<S>) -> usize {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        self.tensors.push(NamedTensor { name: name.into(), shape, data });
        self.tensors.len() - 1
    }

    pub fn push_he<R: Rng + ?Sized>(&mut self, name: &str, shape: Vec<usize>, fan_in: usize, rng: &mut R) -> usize {
        let n: usize = shape.iter().product();
        let std = (2.0 / fan_in as f64).sqrt();
        let dist = Normal::new(0.0, std).unwrap();
        let data = (0..n).map(|_| S::lit(dist.sample(rng))).collect();
        self.push(name, shape, data)
    }

    pub fn push_zeros(&mut self, name: &str, shape: Vec<usize>) -> usize {
        let n: usize = shape.iter().product();
        self.push(name, shape, vec![S::zero(); n])
    }

    pub fn zeros_like(&self) -> Self {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor { name: t.name.clone(), shape: t.shape.clone(), data: vec![S::zero(); t.data.len()] })
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn get(&self, name: &str) -> Option<&NamedTensor<S>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut NamedTensor<S>> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn data(&self, idx: usize) -> &[S] {
        &self.tensors[idx].data
    }

    pub fn data_mut(&mut self, idx: usize) -> &mut [S] {
        &mut self.tensors[idx].data
    }

    /// Mutable access to two distinct tensors at once.
    pub fn pair_mut(&mut self, a: usize, b: usize) -> (&mut [S], &mut [S]) {
        assert_ne!(a, b);
        if a < b {
            let (lo, hi) = self.tensors.split_at_mut(b);
            (&mut lo[a].data, &mut hi[0].data)
        } else {
            let (lo, hi) = self.tensors.split_at_mut(a);
            (&mut hi[0].data, &mut lo[b].data)
        }
    }

    /// True when both sets have identical names and shapes in the same order.
    pub fn same_structure(&self, other: &Self) -> bool {
        self.tensors.len() == other.tensors.len()
            && self
                .tensors
                .iter()
                .zip(&other.tensors)
                .all(|(a, b)| a.name == b.name && a.shape == b.shape)
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: S, other: &Self) {
        assert!(self.same_structure(other), "axpy on mismatched parameter sets");
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += alpha * *y;
            }
        }
    }

    pub fn scale(&mut self, alpha: S) {
        for t in &mut self.tensors {
            for x in &mut t.data {
                *x *= alpha;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn iter_scalars(&self) -> impl Iterator<Item = S> + '_ {
        self.tensors.iter().flat_map(|t| t.data.iter().copied())
    }

    pub fn cast<T: Scalar>(&self) -> ParamSet<T> {
        ParamSet {
            tensors: self
                .tensors
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|v| T::lit(v.to_f64().unwrap())).collect(),
                })
                .collect(),
        }
    }
}
