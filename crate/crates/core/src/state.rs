//! Elements of the state space and of its age-integrable extension.

use std::ops::{Deref, DerefMut};

use serde::Serialize;

use crate::Scalar;

/// Element of the (discretized) state space: one value per component.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(transparent)]
pub struct StateVector<T>(Vec<T>);

impl<T: Scalar> StateVector<T> {
    pub fn zeros(n: usize) -> Self {
        Self(vec![T::zero(); n])
    }

    pub fn constant(n: usize, value: T) -> Self {
        Self(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<T> {
        self.0
    }

    pub fn is_nonnegative(&self) -> bool {
        self.0.iter().all(|&v| v >= T::zero())
    }
}

impl<T> From<Vec<T>> for StateVector<T> {
    fn from(v: Vec<T>) -> Self {
        Self(v)
    }
}

impl<T> Deref for StateVector<T> {
    type Target = [T];
    fn deref(&self) -> &[T] {
        &self.0
    }
}

impl<T> DerefMut for StateVector<T> {
    fn deref_mut(&mut self) -> &mut [T] {
        &mut self.0
    }
}

/// A state vector at every age node `a_0, ..., a_N`, stored node-major.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AgeDensity<T> {
    n_nodes: usize,
    dim: usize,
    data: Vec<T>,
}

impl<T: Scalar> AgeDensity<T> {
    pub fn zeros(n_nodes: usize, dim: usize) -> Self {
        Self {
            n_nodes,
            dim,
            data: vec![T::zero(); n_nodes * dim],
        }
    }

    /// `f(node, component)`.
    pub fn from_fn(n_nodes: usize, dim: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(n_nodes * dim);
        for j in 0..n_nodes {
            for i in 0..dim {
                data.push(f(j, i));
            }
        }
        Self { n_nodes, dim, data }
    }

    pub fn from_nodes(nodes: &[Vec<T>]) -> Self {
        let dim = nodes.first().map_or(0, Vec::len);
        assert!(nodes.iter().all(|v| v.len() == dim), "ragged age density");
        Self {
            n_nodes: nodes.len(),
            dim,
            data: nodes.iter().flatten().copied().collect(),
        }
    }

    #[inline]
    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn node(&self, j: usize) -> &[T] {
        &self.data[j * self.dim..(j + 1) * self.dim]
    }

    #[inline]
    pub fn node_mut(&mut self, j: usize) -> &mut [T] {
        &mut self.data[j * self.dim..(j + 1) * self.dim]
    }

    pub fn nodes(&self) -> impl Iterator<Item = &[T]> {
        self.data.chunks_exact(self.dim.max(1))
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.n_nodes == other.n_nodes && self.dim == other.dim
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    pub fn scaled(&self, s: T) -> Self {
        let mut out = self.clone();
        out.scale(s);
        out
    }

    /// `self += s * other`.
    pub fn axpy(&mut self, s: T, other: &Self) {
        assert!(self.same_shape(other), "age density shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-T::one(), other);
        out
    }

    pub fn min_entry(&self) -> T {
        self.data.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, &v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_nonnegative(&self) -> bool {
        self.data.iter().all(|&v| v >= T::zero())
    }

    pub fn positive_part(&self) -> Self {
        Self {
            n_nodes: self.n_nodes,
            dim: self.dim,
            data: self.data.iter().map(|&v| v.max(T::zero())).collect(),
        }
    }
}
