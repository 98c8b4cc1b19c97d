//! Sparse vocabulary-sized weight vectors.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Non-negative term weights over a vocabulary of `dim` entries, stored as
/// strictly increasing `(token_id, weight)` pairs with `weight > 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRep<T> {
    dim: usize,
    entries: Vec<(u32, T)>,
}

impl<T: Scalar> SparseRep<T> {
    pub fn empty(dim: usize) -> Self {
        SparseRep {
            dim,
            entries: Vec::new(),
        }
    }

    /// Validates ordering, range and positivity of `entries`.
    pub fn new(dim: usize, entries: Vec<(u32, T)>) -> Result<Self> {
        for (k, &(id, w)) in entries.iter().enumerate() {
            if id as usize >= dim {
                return Err(Error::Format(format!("token id {id} outside vocabulary of {dim}")));
            }
            if !(w > T::zero()) || !w.is_finite() {
                return Err(Error::Format(format!("weight {w} for token {id} is not positive")));
            }
            if k > 0 && entries[k - 1].0 >= id {
                return Err(Error::Format("token ids must be strictly increasing".into()));
            }
        }
        Ok(SparseRep { dim, entries })
    }

    /// Entries already known to satisfy the invariants.
    pub(crate) fn from_sorted_unchecked(dim: usize, entries: Vec<(u32, T)>) -> Self {
        debug_assert!(Self::new(dim, entries.clone()).is_ok());
        SparseRep { dim, entries }
    }

    /// Keeps strictly positive coordinates of a dense vector.
    pub fn from_dense(dense: &[T]) -> Self {
        let entries = dense
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > T::zero())
            .map(|(j, &w)| (j as u32, w))
            .collect();
        SparseRep {
            dim: dense.len(),
            entries,
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut v = vec![T::zero(); self.dim];
        for &(j, w) in &self.entries {
            v[j as usize] = w;
        }
        v
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, T)] {
        &self.entries
    }

    /// Number of active tokens.
    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn token_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.entries.iter().map(|e| e.0)
    }

    pub fn weight(&self, token: u32) -> T {
        self.entries
            .binary_search_by_key(&token, |e| e.0)
            .map_or(T::zero(), |k| self.entries[k].1)
    }

    pub fn l1(&self) -> T {
        self.entries.iter().map(|e| e.1).sum()
    }

    /// Converts weights, dropping any that round to zero.
    pub fn cast<U: Scalar>(&self) -> SparseRep<U> {
        let entries = self
            .entries
            .iter()
            .map(|&(j, w)| (j, U::from_f64_lossy(w.to_f64_lossy())))
            .filter(|&(_, w)| w > U::zero())
            .collect();
        SparseRep {
            dim: self.dim,
            entries,
        }
    }
}
