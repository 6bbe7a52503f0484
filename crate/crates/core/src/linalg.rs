//! Sparse symmetric positive definite systems with a fixed pattern.
//!
//! The pattern is built once; each solve refactors numerically.

use std::collections::HashMap;

use nalgebra::DMatrix;
use nalgebra_sparse::factorization::CscCholesky;
use nalgebra_sparse::pattern::SparsityPattern;
use nalgebra_sparse::CscMatrix;

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct SparseSpd {
    n: usize,
    pattern: SparsityPattern,
    lookup: HashMap<(usize, usize), usize>,
    factor: Option<CscCholesky<f64>>,
}

impl SparseSpd {
    /// Pattern holding the diagonal plus every `(r, c)` and `(c, r)` in `entries`.
    pub fn from_entries(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> SparseSpd {
        let mut cols: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        for (r, c) in entries {
            cols[c].push(r);
            cols[r].push(c);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        offsets.push(0);
        for col in cols.iter_mut() {
            col.sort_unstable();
            col.dedup();
            indices.extend_from_slice(col);
            offsets.push(indices.len());
        }
        let mut lookup = HashMap::with_capacity(indices.len());
        for c in 0..n {
            for (k, &r) in indices[offsets[c]..offsets[c + 1]].iter().enumerate() {
                lookup.insert((r, c), offsets[c] + k);
            }
        }
        let pattern = SparsityPattern::try_from_offsets_and_indices(n, n, offsets, indices)
            .expect("pattern built sorted and deduplicated");
        SparseSpd {
            n,
            pattern,
            lookup,
            factor: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    /// Position of entry `(r, c)` in the value array.
    pub fn index(&self, r: usize, c: usize) -> usize {
        self.lookup[&(r, c)]
    }

    pub fn zero_values(&self) -> Vec<f64> {
        vec![0.0; self.nnz()]
    }

    /// `y = A x` for the given values.
    pub fn apply(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        let offsets = self.pattern.major_offsets();
        let rows = self.pattern.minor_indices();
        for c in 0..self.n {
            for k in offsets[c]..offsets[c + 1] {
                y[rows[k]] += values[k] * x[c];
            }
        }
        y
    }

    pub fn solve(&mut self, values: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
        self.factorize(values)?;
        self.solve_factored(rhs)
    }

    /// Factors `values`, replacing any earlier factor.
    pub fn factorize(&mut self, values: &[f64]) -> Result<()> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entry".into()));
        }
        match &mut self.factor {
            Some(f) => f
                .refactor(values)
                .map_err(|e| Error::Linear(format!("{e:?}")))?,
            None => {
                let m =
                    CscMatrix::try_from_pattern_and_values(self.pattern.clone(), values.to_vec())
                        .map_err(|e| Error::Linear(e.to_string()))?;
                self.factor =
                    Some(CscCholesky::factor(&m).map_err(|e| Error::Linear(format!("{e:?}")))?);
            }
        }
        Ok(())
    }

    /// Solves with the last factor from [`SparseSpd::factorize`].
    pub fn solve_factored(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let f = self
            .factor
            .as_ref()
            .ok_or_else(|| Error::Linear("no factorization".into()))?;
        let mut b = DMatrix::from_column_slice(self.n, 1, rhs);
        f.solve_mut(&mut b);
        Ok(b.as_slice().to_vec())
    }
}
